# app/services/__init__.py
from app.services.systems import (
    StepOperator, OperatorSeq, make_paper_example, make_constant, make_random_diagonal,
    load_system, load_system_file, max_step_gain,
)
from app.services.transition import (
    TransitionCache, GrowthTable, transition, min_gain, growth_table, paper_example_closed_form,
)
from app.services.certify import required_offset, fit_certificate, classify, verify_certificate
from app.services.przyluski import (
    weighted_sum, fit_criterion, certificate_to_criterion, criterion_to_certificate, check_equivalence,
)
from app.services.report_service import ReportService, run_analyze, run_sweep
