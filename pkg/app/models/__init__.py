# app/models/__init__.py
from app.models.enums import OperatorKind, Norm, Concept, Variant, Verdict, VARIANT_CONCEPT
from app.models.certificates import Certificate, Classification, EvidencePoint, VerificationReport
from app.models.criterion import CriterionFit, EquivalenceReport
from app.models.config import AnalysisConfig, SweepSpec, SystemDescription
from app.models.reports import AnalysisReport, GrowthSummary, SweepPoint, SweepResult
