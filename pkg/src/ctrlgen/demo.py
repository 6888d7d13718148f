"""Synthetic demo fixtures: one admission with a pre-segmented hospital course.

Nothing here comes from restricted clinical data; the narrative is the kind
of synthetic case used in public demonstrations. The segments drive the
scripted demo session and offline smoke tests.
"""
from __future__ import annotations

from .corpus import ClinicalCase
from .segmentation import Segment, Segmentation

DEMO_SEGMENTS: tuple[tuple[str, str, str], ...] = (
    (
        "Initial Patient Information",
        "What is the patient's initial condition and medical history?",
        "The 75-year-old male patient with multi-organ sarcoidosis, diabetes "
        "mellitus, and chronic renal failure was admitted due to fatigue, "
        "dyspnea, lower limb edema, and pain.",
    ),
    (
        "Initial Treatment and Complications",
        "What treatment did the patient receive initially, and what complications arose?",
        "He received corticosteroid therapy for two years but experienced a "
        "bloodstream infection caused by Pseudomonas aeruginosa, which was "
        "successfully treated with levofloxacin. The patient's dosage of "
        "methylprednisolone was increased, leading to him being transferred "
        "to ICU and intubated due to worsening functional status.",
    ),
    (
        "Antifungal Therapy and Diagnosis",
        "What antifungal therapy was administered, and what diagnoses were made?",
        "He was diagnosed with Candida albicans on Day +3 and started "
        "antifungal therapy with fluconazole (400 mg daily) and then later "
        "found to have disseminated cryptococcal disease on Day +5, leading "
        "to antifungal therapy with liposomal amphotericin B (80 mg daily).",
    ),
    (
        "Outcome and Laboratory Findings",
        "What was the patient's outcome, and what laboratory findings were reported?",
        "Unfortunately, the patient died from septic shock on Day +10. The "
        "laboratory findings indicated lymphocytopenia of 900 cells/µL, "
        "creatinine of 1.73 mg/dL, C-reactive protein of 83 mg/L, "
        "procalcitonin of 2.5 ng/L, increased C-reactive protein to 160 "
        "mg/L, increased procalcitonin to 14 ng/mL, and serum positive "
        "titers for CrAg (≥ 1:4096).",
    ),
    (
        "Diagnostic Findings",
        "What diagnostic findings were reported?",
        "The diagnostic findings included pulmonary infiltration with "
        "lymphadenopathy, multiple nodules within the lung parenchyma, and "
        "disseminated cryptococcal disease.",
    ),
    (
        "Treatment Summary",
        "What treatment did the patient receive?",
        "The treatment consisted of broad-spectrum antibiotic therapy with "
        "meropenem and teicoplanin, antifungal therapy with fluconazole "
        "(Day +3), and antifungal therapy with liposomal amphotericin B "
        "(Day +6).",
    ),
    (
        "Follow-up Information",
        "Is there any follow-up information available?",
        "There is no follow-up information available.",
    ),
)

DEMO_DOCUMENT = " ".join(span for _, _, span in DEMO_SEGMENTS)

DEMO_ELEMENTS: tuple[tuple[str, str], ...] = tuple(
    (kind, text)
    for heading, question, span in DEMO_SEGMENTS
    for kind, text in (("topic", heading), ("question", question), ("span", span))
)


def demo_segmentation(target_id: str = "demo-001", task: str = "bhc") -> Segmentation:
    return Segmentation(
        target_id=target_id,
        task=task,
        segments=tuple(Segment(h, q, s) for h, q, s in DEMO_SEGMENTS),
        status="raw",
    )


def demo_case(case_id: str = "demo-001") -> ClinicalCase:
    return ClinicalCase(
        case_id=case_id,
        discharge_summary=(
            "Chief Complaint:\nFatigue, dyspnea, lower limb edema, and pain.\n\n"
            "History of Present Illness:\nA 75-year-old man with known "
            "multi-organ sarcoidosis on long-term corticosteroids presented "
            "with progressive fatigue, shortness of breath, and bilateral "
            "leg swelling.\n\n"
            "Past Medical History:\nSarcoidosis, diabetes mellitus, chronic "
            "renal failure.\n"
        ),
        radiology_reports=(
            "CHEST CT: Pulmonary infiltration with mediastinal "
            "lymphadenopathy. Multiple nodules within the lung parenchyma.",
            "CHEST X-RAY: Bilateral interstitial opacities, unchanged "
            "cardiac silhouette.",
        ),
        target_bhc=DEMO_DOCUMENT,
        target_di=(
            "You were admitted because of tiredness, trouble breathing, and "
            "swelling in your legs. You were treated in the intensive care "
            "unit for serious infections. Please keep all follow-up "
            "appointments and take your medications as prescribed."
        ),
        chief_complaint="Fatigue, dyspnea, lower limb edema, and pain",
    )
