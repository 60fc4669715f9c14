//! Aggregation of per-mission outcomes into accuracy tables, optimal path
//! rate, accomplished progress, switch-space coverage and error shares.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Combo;
use crate::matcher::ErrorClass;
use crate::model::{ActionType, RelationType};
use crate::plan::ExecutionPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionResult {
    pub case_id: String,
    pub mission_index: usize,
    /// Number of missions in the enclosing case.
    pub mission_count: usize,
    pub action_type: ActionType,
    pub relation_type: RelationType,
    /// Action types of the missions before this one.
    pub preceding: Vec<ActionType>,
    pub passed: bool,
    /// False when the case aborted before this mission started.
    pub reached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_taken: Option<ExecutionPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal: Option<bool>,
    pub steps_accepted: usize,
    pub steps_required: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl MissionResult {
    /// Completed fraction: 1 for a pass, otherwise the accepted share of the
    /// required steps, kept strictly below 1.
    pub fn progress(&self) -> f64 {
        if self.passed {
            return 1.0;
        }
        if self.steps_required == 0 {
            return 0.0;
        }
        let frac = self.steps_accepted as f64 / self.steps_required as f64;
        frac.clamp(0.0, 1.0).min(1.0 - f64::EPSILON)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub combo: Vec<ActionType>,
    pub mission_results: Vec<MissionResult>,
    pub all_passed: bool,
}

impl CaseResult {
    pub fn new(case_id: String, combo: Vec<ActionType>, mission_results: Vec<MissionResult>) -> Self {
        let all_passed = mission_results.iter().all(|m| m.passed);
        Self { case_id, combo, mission_results, all_passed }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("unknown group key `{0}` (expected mission_count, action_type, relation_type or combo_prefix)")]
    UnknownGroupKey(String),
    #[error("no results to aggregate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    MissionCount,
    ActionType,
    RelationType,
    ComboPrefix,
}

impl FromStr for GroupBy {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, MetricsError> {
        match s {
            "mission_count" => Ok(GroupBy::MissionCount),
            "action_type" => Ok(GroupBy::ActionType),
            "relation_type" => Ok(GroupBy::RelationType),
            "combo_prefix" => Ok(GroupBy::ComboPrefix),
            other => Err(MetricsError::UnknownGroupKey(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub group: String,
    pub passed: usize,
    pub total: usize,
    pub accuracy: f64,
}

pub fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Sort key plus display label of a mission's group.
fn group_key(r: &MissionResult, by: GroupBy) -> (Vec<usize>, String) {
    match by {
        GroupBy::MissionCount => (vec![r.mission_count], r.mission_count.to_string()),
        GroupBy::ActionType => {
            let pos = ActionType::ALL.iter().position(|t| *t == r.action_type).unwrap_or(0);
            (vec![pos], r.action_type.label().to_string())
        }
        GroupBy::RelationType => (vec![r.relation_type as usize], r.relation_type.label().to_string()),
        GroupBy::ComboPrefix => {
            let current = r.action_type.top_level();
            let prefix = Combo::of_actions(&r.preceding);
            let mut key: Vec<usize> = vec![prefix.len()];
            key.extend(prefix.0.iter().map(|t| *t as usize));
            key.push(current as usize);
            (key, format!("{}|{}", prefix_label(&prefix), current))
        }
    }
}

fn prefix_label(prefix: &Combo) -> String {
    if prefix.is_empty() {
        "start".to_string()
    } else {
        prefix.to_string()
    }
}

/// Per-group pass percentage. `combo_prefix` groups carry labels of the form
/// `<preceding>|<current>` with the four-way alphabet.
pub fn accuracy(results: &[MissionResult], group_by: GroupBy) -> Result<Vec<AccuracyRow>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut groups: BTreeMap<Vec<usize>, (String, usize, usize)> = BTreeMap::new();
    for r in results {
        let (key, label) = group_key(r, group_by);
        let entry = groups.entry(key).or_insert((label, 0, 0));
        entry.1 += usize::from(r.passed);
        entry.2 += 1;
    }
    Ok(groups
        .into_values()
        .map(|(group, passed, total)| AccuracyRow { group, passed, total, accuracy: percent(passed, total) })
        .collect())
}

/// Share of passed multi-tool missions that took a minimum-step path.
/// `None` when no multi-tool mission passed.
pub fn optimal_path_rate(results: &[MissionResult]) -> Option<f64> {
    let passed: Vec<&MissionResult> = results.iter().filter(|r| r.action_type.is_multi() && r.passed).collect();
    if passed.is_empty() {
        return None;
    }
    let optimal = passed.iter().filter(|r| r.optimal == Some(true)).count();
    Some(percent(optimal, passed.len()))
}

/// Mean over missions of [`MissionResult::progress`], as a fraction.
pub fn case_progress(case: &CaseResult) -> f64 {
    if case.mission_results.is_empty() {
        return 0.0;
    }
    case.mission_results.iter().map(MissionResult::progress).sum::<f64>() / case.mission_results.len() as f64
}

/// Partial-credit percentage: each case scores the mean completed fraction
/// of its missions, and cases are averaged. `None` for no cases.
pub fn accomplished_progress(case_results: &[CaseResult]) -> Option<f64> {
    if case_results.is_empty() {
        return None;
    }
    let total: f64 = case_results.iter().map(case_progress).sum();
    Some(100.0 * total / case_results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsssDenominator {
    /// All lengths `1..=max_n`: `sum 4^i`.
    #[default]
    Cumulative,
    /// Only length `max_n`: `4^max_n`.
    Exact,
}

impl FromStr for MsssDenominator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cumulative" => Ok(MsssDenominator::Cumulative),
            "exact" => Ok(MsssDenominator::Exact),
            other => Err(format!("unknown MSSS denominator `{other}`")),
        }
    }
}

/// Mission-switching-space scale: percentage of possible four-way
/// combinations present among `combos`.
pub fn msss(combos: &[Combo], max_n: usize, denominator: MsssDenominator) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    let distinct: BTreeSet<&Combo> = combos.iter().collect();
    let (covered, possible) = match denominator {
        MsssDenominator::Cumulative => (
            distinct.iter().filter(|c| (1..=max_n).contains(&c.len())).count(),
            (1..=max_n).map(|i| 4usize.pow(i as u32)).sum::<usize>(),
        ),
        MsssDenominator::Exact => {
            (distinct.iter().filter(|c| c.len() == max_n).count(), 4usize.pow(max_n as u32))
        }
    };
    percent(covered, possible)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub failures: usize,
    pub counts: BTreeMap<String, usize>,
    /// Five classes, format errors kept separate.
    pub raw: Vec<(ErrorClass, f64)>,
    /// Four classes, format errors folded into tool errors.
    pub folded: Vec<(ErrorClass, f64)>,
}

pub fn error_distribution(results: &[MissionResult]) -> ErrorDistribution {
    let errors: Vec<ErrorClass> = results.iter().filter(|r| !r.passed).filter_map(|r| r.error).collect();
    let count = |class: ErrorClass| errors.iter().filter(|e| **e == class).count();
    let n = errors.len();
    let raw = ErrorClass::ALL.iter().map(|&c| (c, percent(count(c), n))).collect();
    let folded = ErrorClass::ALL[..4]
        .iter()
        .map(|&c| {
            let k = if c == ErrorClass::ToolError { count(c) + count(ErrorClass::FormatError) } else { count(c) };
            (c, percent(k, n))
        })
        .collect();
    let counts = ErrorClass::ALL.iter().map(|&c| (c.label().to_string(), count(c))).collect();
    ErrorDistribution { failures: n, counts, raw, folded }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub scored_cases: usize,
    pub unscored_cases: usize,
    pub case_pass_rate: Option<f64>,
    pub by_mission_count: Vec<AccuracyRow>,
    pub by_action_type: Vec<AccuracyRow>,
    pub by_relation_type: Vec<AccuracyRow>,
    pub combo_heatmap: Vec<AccuracyRow>,
    pub optimal_path_rate: Option<f64>,
    pub accomplished_progress: Option<f64>,
    pub msss_cumulative: f64,
    pub msss_exact: f64,
    pub error_distribution: ErrorDistribution,
}

/// Full metric suite over scored cases. `dataset_combos` drives MSSS.
pub fn aggregate(scored: &[CaseResult], unscored_cases: usize, dataset_combos: &[Combo], max_n: usize) -> Aggregates {
    let missions: Vec<MissionResult> = scored.iter().flat_map(|c| c.mission_results.iter().cloned()).collect();
    let table = |by| accuracy(&missions, by).unwrap_or_default();
    Aggregates {
        scored_cases: scored.len(),
        unscored_cases,
        case_pass_rate: (!scored.is_empty()).then(|| percent(scored.iter().filter(|c| c.all_passed).count(), scored.len())),
        by_mission_count: table(GroupBy::MissionCount),
        by_action_type: table(GroupBy::ActionType),
        by_relation_type: table(GroupBy::RelationType),
        combo_heatmap: table(GroupBy::ComboPrefix),
        optimal_path_rate: optimal_path_rate(&missions),
        accomplished_progress: accomplished_progress(scored),
        msss_cumulative: msss(dataset_combos, max_n, MsssDenominator::Cumulative),
        msss_exact: msss(dataset_combos, max_n, MsssDenominator::Exact),
        error_distribution: error_distribution(&missions),
    }
}

/// Splits a `combo_prefix` label back into `(preceding, current)`.
pub fn split_combo_label(label: &str) -> (&str, &str) {
    label.split_once('|').unwrap_or((label, ""))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TopLevelType;

    fn result(action_type: ActionType, passed: bool) -> MissionResult {
        MissionResult {
            case_id: "c".into(),
            mission_index: 0,
            mission_count: 1,
            action_type,
            relation_type: RelationType::None,
            preceding: vec![],
            passed,
            reached: true,
            path_taken: None,
            optimal: None,
            steps_accepted: usize::from(passed),
            steps_required: 1,
            error: None,
            failure: None,
        }
    }

    #[test]
    fn accuracy_rows() {
        let mut rs: Vec<_> = (0..4).map(|i| result(ActionType::MultiSerial, i == 0)).collect();
        rs.push(result(ActionType::Single, true));
        let rows = accuracy(&rs, GroupBy::ActionType).unwrap();
        assert_eq!(rows[0].group, "A_single");
        assert_eq!(rows[0].accuracy, 100.0);
        assert_eq!(rows[1].group, "A_multi_S");
        assert_eq!(rows[1].accuracy, 25.0);
        assert_eq!("nope".parse::<GroupBy>(), Err(MetricsError::UnknownGroupKey("nope".into())));
        assert_eq!(accuracy(&[], GroupBy::ActionType), Err(MetricsError::Empty));
    }

    #[test]
    fn combo_prefix_labels() {
        let mut r = result(ActionType::MultiMixed, true);
        r.preceding = vec![ActionType::Single, ActionType::Chat];
        let rows = accuracy(&[r, result(ActionType::Chat, false)], GroupBy::ComboPrefix).unwrap();
        assert_eq!(rows[0].group, "start|Chat");
        assert_eq!(rows[1].group, "Single>Chat|Multi");
        assert_eq!(split_combo_label(&rows[1].group), ("Single>Chat", "Multi"));
    }

    #[test]
    fn optimal_rate() {
        let mut a = result(ActionType::MultiMixed, true);
        a.optimal = Some(true);
        let mut b = a.clone();
        assert_eq!(optimal_path_rate(&[a.clone(), b.clone()]), Some(100.0));
        b.optimal = Some(false);
        assert_eq!(optimal_path_rate(&[a, b]), Some(50.0));
        assert_eq!(optimal_path_rate(&[result(ActionType::MultiMixed, false)]), None);
    }

    #[test]
    fn partial_credit() {
        let mut ms: Vec<MissionResult> = (0..4).map(|_| result(ActionType::Single, true)).collect();
        ms[2] = MissionResult { passed: false, steps_accepted: 1, steps_required: 3, ..ms[2].clone() };
        ms[3] = MissionResult { passed: false, reached: false, steps_accepted: 0, steps_required: 1, ..ms[3].clone() };
        let case = CaseResult::new("c".into(), vec![ActionType::Single; 4], ms);
        assert!((100.0 * case_progress(&case) - 58.333_333).abs() < 1e-4);

        let zero = CaseResult::new(
            "z".into(),
            vec![ActionType::Single; 4],
            (0..4).map(|_| MissionResult { steps_accepted: 0, ..result(ActionType::Single, false) }).collect(),
        );
        assert_eq!(accomplished_progress(&[zero]), Some(0.0));
        assert_eq!(accomplished_progress(&[]), None);
    }

    #[test]
    fn msss_arithmetic() {
        let c = |t: &[TopLevelType]| Combo(t.to_vec());
        use TopLevelType::*;
        assert_eq!(msss(&[c(&[Single]), c(&[Chat])], 1, MsssDenominator::Cumulative), 50.0);
        let eight = [
            c(&[Single]),
            c(&[Chat]),
            c(&[Clarify]),
            c(&[Multi]),
            c(&[Single, Chat]),
            c(&[Chat, Multi]),
            c(&[Multi, Multi]),
            c(&[Clarify, Single]),
            c(&[Clarify, Single]),
        ];
        assert_eq!(msss(&eight, 2, MsssDenominator::Cumulative), 40.0);
        assert_eq!(msss(&eight, 2, MsssDenominator::Exact), 25.0);
    }

    #[test]
    fn error_shares() {
        let mut rs = Vec::new();
        for class in [ErrorClass::ToolError, ErrorClass::ToolError, ErrorClass::FormatError, ErrorClass::ParamValueError] {
            rs.push(MissionResult { error: Some(class), ..result(ActionType::Single, false) });
        }
        let d = error_distribution(&rs);
        assert_eq!(d.failures, 4);
        assert_eq!(d.folded, vec![
            (ErrorClass::ToolError, 75.0),
            (ErrorClass::ParamNameHallucination, 0.0),
            (ErrorClass::ParamValueHallucination, 0.0),
            (ErrorClass::ParamValueError, 25.0),
        ]);
        assert_eq!(d.raw[0], (ErrorClass::ToolError, 50.0));
        assert_eq!(d.raw[4], (ErrorClass::FormatError, 25.0));
    }
}
