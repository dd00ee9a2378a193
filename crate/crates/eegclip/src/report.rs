//! Clinical report parsing, label derivation, and zero-shot prompt pairs.
//!
//! Reports are free text divided into up to 15 named sections. The parser is
//! total: any UTF-8 input yields a `ClinicalReport`, with absent sections left
//! empty and unrecognized headers treated as ordinary content.

use crate::data::{Gender, Recording};
use crate::{Error, Result};

/// The canonical report sections, in canonical order. The discriminant is the
/// section's index into [`ClinicalReport::sections`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionName {
    Impression,
    DescriptionOfTheRecord,
    ClinicalHistory,
    Medications,
    Introduction,
    ClinicalCorrelation,
    HeartRate,
    Findings,
    ReasonForStudy,
    TechnicalDifficulties,
    Events,
    ConditionOfTheRecording,
    PastMedicalHistory,
    TypeOfStudy,
    ActivationProcedures,
}

pub const N_SECTIONS: usize = 15;

impl SectionName {
    pub const ALL: [SectionName; N_SECTIONS] = [
        SectionName::Impression,
        SectionName::DescriptionOfTheRecord,
        SectionName::ClinicalHistory,
        SectionName::Medications,
        SectionName::Introduction,
        SectionName::ClinicalCorrelation,
        SectionName::HeartRate,
        SectionName::Findings,
        SectionName::ReasonForStudy,
        SectionName::TechnicalDifficulties,
        SectionName::Events,
        SectionName::ConditionOfTheRecording,
        SectionName::PastMedicalHistory,
        SectionName::TypeOfStudy,
        SectionName::ActivationProcedures,
    ];

    /// The uppercase header as it appears in reports.
    pub fn header(self) -> &'static str {
        match self {
            SectionName::Impression => "IMPRESSION",
            SectionName::DescriptionOfTheRecord => "DESCRIPTION OF THE RECORD",
            SectionName::ClinicalHistory => "CLINICAL HISTORY",
            SectionName::Medications => "MEDICATIONS",
            SectionName::Introduction => "INTRODUCTION",
            SectionName::ClinicalCorrelation => "CLINICAL CORRELATION",
            SectionName::HeartRate => "HEART RATE",
            SectionName::Findings => "FINDINGS",
            SectionName::ReasonForStudy => "REASON FOR STUDY",
            SectionName::TechnicalDifficulties => "TECHNICAL DIFFICULTIES",
            SectionName::Events => "EVENTS",
            SectionName::ConditionOfTheRecording => "CONDITION OF THE RECORDING",
            SectionName::PastMedicalHistory => "PAST MEDICAL HISTORY",
            SectionName::TypeOfStudy => "TYPE OF STUDY",
            SectionName::ActivationProcedures => "ACTIVATION PROCEDURES",
        }
    }

    /// Case-insensitive name lookup; accepts spaces or underscores between
    /// words, so config files can write `heart_rate`.
    pub fn parse(s: &str) -> Result<SectionName> {
        let norm = s.trim().replace('_', " ");
        for name in SectionName::ALL {
            if norm.eq_ignore_ascii_case(name.header()) {
                return Ok(name);
            }
        }
        Err(Error::Config(format!("unknown report section {s:?}")))
    }
}

/// A report split into its canonical sections. `raw` keeps the original text
/// because some label rules scan the whole report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalReport {
    sections: [String; N_SECTIONS],
    pub raw: String,
}

impl ClinicalReport {
    pub fn section(&self, name: SectionName) -> &str {
        &self.sections[name as usize]
    }

    /// Sections with nonempty content, in canonical order.
    pub fn present_sections(&self) -> Vec<SectionName> {
        SectionName::ALL
            .into_iter()
            .filter(|n| !self.section(*n).is_empty())
            .collect()
    }
}

/// Matches a line against the canonical headers: the line must begin with a
/// section name (case-insensitive) followed, after optional blanks, by a
/// colon. Returns the section and the text after the colon.
fn match_header(line: &str) -> Option<(SectionName, &str)> {
    for name in SectionName::ALL {
        let h = name.header();
        let Some(prefix) = line.get(..h.len()) else {
            continue;
        };
        if !prefix.eq_ignore_ascii_case(h) {
            continue;
        }
        let rest = line[h.len()..].trim_start_matches([' ', '\t']);
        if let Some(content) = rest.strip_prefix(':') {
            return Some((name, content));
        }
    }
    None
}

/// Splits `text` into canonical sections. Total: never fails. A section's
/// content runs from its header to the next header or end of text and is
/// whitespace-trimmed; text before the first header is ignored; a repeated
/// header appends to the earlier content.
pub fn parse_report(text: &str) -> ClinicalReport {
    let mut sections: [String; N_SECTIONS] = std::array::from_fn(|_| String::new());
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some((name, first)) = match_header(line) {
            let idx = name as usize;
            if !sections[idx].is_empty() {
                sections[idx].push('\n');
            }
            sections[idx].push_str(first.trim_start());
            current = Some(idx);
        } else if let Some(idx) = current {
            sections[idx].push('\n');
            sections[idx].push_str(line);
        }
    }
    for s in sections.iter_mut() {
        let trimmed = s.trim();
        if trimmed.len() != s.len() {
            *s = trimmed.to_string();
        }
    }
    ClinicalReport {
        sections,
        raw: text.to_string(),
    }
}

/// Which sections feed the text tower.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SectionSelection {
    All,
    Subset(Vec<SectionName>),
}

impl SectionSelection {
    pub fn validate(&self) -> Result<()> {
        match self {
            SectionSelection::All => Ok(()),
            SectionSelection::Subset(names) if names.is_empty() => {
                Err(Error::Config("section subset must be nonempty".into()))
            }
            SectionSelection::Subset(_) => Ok(()),
        }
    }

    fn contains(&self, name: SectionName) -> bool {
        match self {
            SectionSelection::All => true,
            SectionSelection::Subset(names) => names.contains(&name),
        }
    }
}

/// Renders the selected nonempty sections as `NAME: content` lines in
/// canonical order, regardless of their order in the raw text.
pub fn select_sections(report: &ClinicalReport, sel: &SectionSelection) -> String {
    let mut out = String::new();
    for name in SectionName::ALL {
        if !sel.contains(name) {
            continue;
        }
        let content = report.section(name);
        if content.is_empty() {
            continue;
        }
        out.push_str(name.header());
        out.push_str(": ");
        out.push_str(content);
        out.push('\n');
    }
    out
}

/// The four classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Pathological,
    Age,
    Gender,
    Medication,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Pathological, Task::Age, Task::Gender, Task::Medication];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pathological => "pathological",
            Task::Age => "age",
            Task::Gender => "gender",
            Task::Medication => "medication",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pathological" => Ok(Task::Pathological),
            "age" => Ok(Task::Age),
            "gender" => Ok(Task::Gender),
            "medication" => Ok(Task::Medication),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Per-recording binary labels; a field is `None` when the source metadata
/// is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelSet {
    pub pathological: Option<bool>,
    pub age_over_50: Option<bool>,
    pub gender: Option<Gender>,
    pub medication_positive: Option<bool>,
}

impl LabelSet {
    /// The binary label for `task`: `false` is the task's first class
    /// (prompt A), `true` the second (prompt B). Gender maps M→false,
    /// F→true to match the prompt order.
    pub fn class(&self, task: Task) -> Option<bool> {
        match task {
            Task::Pathological => self.pathological,
            Task::Age => self.age_over_50,
            Task::Gender => self.gender.map(|g| g == Gender::F),
            Task::Medication => self.medication_positive,
        }
    }
}

/// Anticonvulsants whose mention defines the medication task.
pub const MEDICATION_KEYWORDS: [&str; 3] = ["keppra", "dilantin", "depakote"];

/// Case-insensitive substring scan for any tracked anticonvulsant.
pub fn medication_mentioned(text: &str) -> bool {
    let lower = text.to_lowercase();
    MEDICATION_KEYWORDS.iter().any(|k| lower.contains(k))
}

/// Derives the task labels for one recording. Age uses a strict >50 cut, so
/// exactly 50 falls in the younger class. Medication scans the whole raw
/// report. Pathology comes only from the dataset flag.
pub fn derive_labels(
    recording: &Recording,
    report: &ClinicalReport,
    pathology_flag: Option<bool>,
) -> LabelSet {
    LabelSet {
        pathological: pathology_flag,
        age_over_50: recording.age_years.map(|a| a > 50),
        gender: recording.gender,
        medication_positive: Some(medication_mentioned(&report.raw)),
    }
}

/// The fixed zero-shot prompt pair for `task`; the first string describes
/// class `false`, the second class `true`.
pub fn build_prompts(task: Task) -> (&'static str, &'static str) {
    match task {
        Task::Pathological => ("This is a normal recording", "This is an abnormal recording"),
        Task::Age => (
            "The patient is under 50 years old",
            "The patient is over 50 years old",
        ),
        Task::Gender => ("The patient is male", "The patient is female"),
        Task::Medication => (
            "No anti-epileptic drugs were prescribed to the patient",
            "Anti-epileptic drugs were prescribed to the patient",
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn dummy_recording(age: Option<u32>, gender: Option<Gender>) -> Recording {
        Recording {
            id: "r1".into(),
            signal: Array2::zeros((1, 4)),
            rate_hz: 100.0,
            channel_names: vec!["C1".into()],
            age_years: age,
            gender,
            report_text: String::new(),
        }
    }

    #[test]
    fn single_section() {
        let r = parse_report("IMPRESSION: Normal EEG.");
        assert_eq!(r.section(SectionName::Impression), "Normal EEG.");
        for name in SectionName::ALL {
            if name != SectionName::Impression {
                assert_eq!(r.section(name), "");
            }
        }
    }

    #[test]
    fn empty_text_gives_all_empty() {
        let r = parse_report("");
        assert!(r.present_sections().is_empty());
    }

    #[test]
    fn two_sections_either_order() {
        let a = parse_report("IMPRESSION: abnormal\nMEDICATIONS: keppra\n");
        let b = parse_report("MEDICATIONS: keppra\nIMPRESSION: abnormal\n");
        for r in [&a, &b] {
            assert_eq!(r.section(SectionName::Impression), "abnormal");
            assert_eq!(r.section(SectionName::Medications), "keppra");
        }
    }

    #[test]
    fn multiline_content_and_case_insensitive_headers() {
        let text = "impression: first line\n  second line\nHeart Rate: 72 bpm";
        let r = parse_report(text);
        assert_eq!(
            r.section(SectionName::Impression),
            "first line\n  second line"
        );
        assert_eq!(r.section(SectionName::HeartRate), "72 bpm");
    }

    #[test]
    fn leading_text_ignored_and_unknown_headers_are_content() {
        let text = "Hospital copy, page 1\nIMPRESSION: ok\nRANDOM NOTE: still impression\n";
        let r = parse_report(text);
        assert_eq!(
            r.section(SectionName::Impression),
            "ok\nRANDOM NOTE: still impression"
        );
    }

    #[test]
    fn header_requires_line_anchor_and_colon() {
        let r = parse_report("see IMPRESSION: not a header\nIMPRESSION no colon\n");
        assert_eq!(r.section(SectionName::Impression), "");
    }

    #[test]
    fn repeated_header_appends() {
        let r = parse_report("EVENTS: one\nEVENTS: two\n");
        assert_eq!(r.section(SectionName::Events), "one\ntwo");
    }

    #[test]
    fn select_all_single_section() {
        let r = parse_report("IMPRESSION: Normal EEG.");
        assert_eq!(
            select_sections(&r, &SectionSelection::All),
            "IMPRESSION: Normal EEG.\n"
        );
    }

    #[test]
    fn select_missing_section_is_empty() {
        let r = parse_report("IMPRESSION: Normal EEG.");
        let sel = SectionSelection::Subset(vec![SectionName::HeartRate]);
        assert_eq!(select_sections(&r, &sel), "");
    }

    #[test]
    fn select_subset_in_canonical_order() {
        let r = parse_report("CLINICAL HISTORY: seizures\nIMPRESSION: abnormal\n");
        let sel = SectionSelection::Subset(vec![
            SectionName::ClinicalHistory,
            SectionName::Impression,
        ]);
        assert_eq!(
            select_sections(&r, &sel),
            "IMPRESSION: abnormal\nCLINICAL HISTORY: seizures\n"
        );
    }

    #[test]
    fn empty_subset_rejected() {
        assert!(SectionSelection::Subset(vec![]).validate().is_err());
        assert!(SectionSelection::All.validate().is_ok());
    }

    #[test]
    fn age_boundary_is_strictly_over_50() {
        let report = parse_report("");
        let at_50 = derive_labels(&dummy_recording(Some(50), None), &report, None);
        assert_eq!(at_50.age_over_50, Some(false));
        let at_51 = derive_labels(&dummy_recording(Some(51), None), &report, None);
        assert_eq!(at_51.age_over_50, Some(true));
        let missing = derive_labels(&dummy_recording(None, None), &report, None);
        assert_eq!(missing.age_over_50, None);
    }

    #[test]
    fn medication_substring_match() {
        assert!(medication_mentioned("MEDICATIONS: Keppra 500mg"));
        assert!(medication_mentioned("takes DILANTIN daily"));
        assert!(medication_mentioned("depakote"));
        assert!(!medication_mentioned("MEDICATIONS: aspirin"));
        let report = parse_report("MEDICATIONS: Keppra 500mg");
        let labels = derive_labels(&dummy_recording(None, None), &report, Some(true));
        assert_eq!(labels.medication_positive, Some(true));
        assert_eq!(labels.pathological, Some(true));
    }

    #[test]
    fn gender_class_follows_prompt_order() {
        let report = parse_report("");
        let m = derive_labels(&dummy_recording(None, Some(Gender::M)), &report, None);
        assert_eq!(m.class(Task::Gender), Some(false));
        let f = derive_labels(&dummy_recording(None, Some(Gender::F)), &report, None);
        assert_eq!(f.class(Task::Gender), Some(true));
    }

    #[test]
    fn prompt_pairs_are_fixed() {
        assert_eq!(
            build_prompts(Task::Pathological),
            ("This is a normal recording", "This is an abnormal recording")
        );
        assert_eq!(
            build_prompts(Task::Age),
            (
                "The patient is under 50 years old",
                "The patient is over 50 years old"
            )
        );
        assert_eq!(
            build_prompts(Task::Gender),
            ("The patient is male", "The patient is female")
        );
        assert_eq!(
            build_prompts(Task::Medication),
            (
                "No anti-epileptic drugs were prescribed to the patient",
                "Anti-epileptic drugs were prescribed to the patient"
            )
        );
    }

    #[test]
    fn all_fifteen_sections_extracted_from_full_fixture() {
        let mut text = String::new();
        for (i, name) in SectionName::ALL.iter().enumerate() {
            text.push_str(&format!("{}: content {}\n", name.header(), i));
        }
        let r = parse_report(&text);
        assert_eq!(r.present_sections().len(), N_SECTIONS);
        for (i, name) in SectionName::ALL.iter().enumerate() {
            assert_eq!(r.section(*name), format!("content {i}"));
        }
    }

    #[test]
    fn section_name_parse_accepts_underscores() {
        assert_eq!(
            SectionName::parse("heart_rate").unwrap(),
            SectionName::HeartRate
        );
        assert_eq!(
            SectionName::parse("Description of the Record").unwrap(),
            SectionName::DescriptionOfTheRecord
        );
        assert!(SectionName::parse("nonsense").is_err());
    }

    #[test]
    fn synthetic_render_round_trips() {
        let text =
            crate::data::synthetic::render_report("rhythmic slow activity.", 64, Gender::F);
        let r = parse_report(&text);
        assert!(r.section(SectionName::Introduction).contains("64 year old female"));
        assert!(r
            .section(SectionName::DescriptionOfTheRecord)
            .contains("rhythmic slow activity."));
        assert!(r.section(SectionName::Impression).contains("rhythmic slow activity."));
        assert_eq!(r.present_sections().len(), 3);
    }

    proptest! {
        #[test]
        fn parser_is_total(text in ".*") {
            let _ = parse_report(&text);
        }

        #[test]
        fn parsed_content_appears_in_raw(body in "[a-zA-Z0-9 .,]{0,60}") {
            let text = format!("FINDINGS: {body}\n");
            let r = parse_report(&text);
            prop_assert!(r.raw.contains(r.section(SectionName::Findings)));
        }
    }
}
