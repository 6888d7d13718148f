"""Shared fixtures: the published segmentation example and corpus CSVs.

The seven-segment synthetic hospital-course example is transcribed here
independently of the package's demo module, so tests assert against a second
transcription rather than whatever the package happens to ship.
"""
from __future__ import annotations

import csv
from pathlib import Path

import pytest

from ctrlgen.corpus import ClinicalCase

GOLDEN_DIR = Path(__file__).parent / "golden"

# (heading, question, span) triples of the reference segmentation example.
REFERENCE_SEGMENTS = (
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

REFERENCE_HEADINGS = tuple(h for h, _, _ in REFERENCE_SEGMENTS)

# The control-sequence document for the reference segmentation, assembled
# by hand rather than via the package serializer.
REFERENCE_XML = "\n\n".join(
    f"<topic>{h}</topic>\n<question>{q}</question>\n<span>{s}</span>"
    for h, q, s in REFERENCE_SEGMENTS
)


@pytest.fixture
def reference_segments():
    return REFERENCE_SEGMENTS


@pytest.fixture
def reference_xml():
    return REFERENCE_XML


def make_case(case_id: str = "c1", n_reports: int = 2) -> ClinicalCase:
    return ClinicalCase(
        case_id=case_id,
        discharge_summary=f"HPI ({case_id}): admitted with chest pain.\n",
        radiology_reports=tuple(
            f"Report {i} for {case_id}: no acute findings." for i in range(1, n_reports + 1)
        ),
        target_bhc=f"Patient {case_id} was admitted, treated, and improved steadily.",
        target_di=f"Patient {case_id}: rest at home and attend the follow-up visit.",
    )


@pytest.fixture
def tiny_case():
    return make_case()


def write_corpus_csvs(tmp_path: Path, summaries: list[tuple[str, str]], reports: list[tuple[str, str, str]]):
    summaries_path = tmp_path / "summaries.csv"
    reports_path = tmp_path / "reports.csv"
    with open(summaries_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hadm_id", "text"])
        writer.writerows(summaries)
    with open(reports_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hadm_id", "report_id", "text"])
        writer.writerows(reports)
    return summaries_path, reports_path


RAW_SUMMARY_TEMPLATE = """Name: Patient {case_id}
Chief Complaint: shortness of breath

History of Present Illness:
Admitted with worsening dyspnea over three days.

Brief Hospital Course:
{bhc}

Medications on Admission:
aspirin 81 mg daily

Discharge Instructions:
{di}

Followup Instructions:
See your primary care doctor in two weeks.
"""


def make_raw_summary(case_id: str, bhc: str | None = None, di: str | None = None) -> str:
    text = RAW_SUMMARY_TEMPLATE.format(
        case_id=case_id,
        bhc=bhc or f"Patient {case_id} improved on diuretics and was discharged.",
        di=di or f"Patient {case_id}: weigh yourself daily and limit salt intake.",
    )
    return text
