//! Subtask-detection accuracy harness.
//!
//! A suite is a list of labelled tasks. [`run_eval`] asks the provider to
//! classify every case under each strategy, repeats that `runs` times, and
//! scores the parsed verdicts against the gold labels. Unparseable answers
//! and provider errors count as wrong; neither aborts a run.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context_store::EMPTY_CONTEXT;
use crate::error::{Error, Result};
use crate::prompts::{DetectionStrategy, Polarity, PromptLibrary, TemplateId};
use crate::provider::parse::parse_yes_no;
use crate::provider::{CompletionRequest, LlmProvider, MockProvider, RequestParams};

/// The bundled 40-case suite.
pub const BUNDLED_SUITE: &str = include_str!("../fixtures/detection_suite.txt");

pub const TAG_DRAFT: &str = "eval_draft";
pub const TAG_DETECT: &str = "eval_detect";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Academic,
    Practical,
    Recreational,
    Travel,
}

impl Scenario {
    /// Goal used as the main purpose when drafting for a case.
    pub fn goal(self) -> &'static str {
        match self {
            Scenario::Academic => "Apply for a PhD program",
            Scenario::Practical => "Obtain a driver's license",
            Scenario::Recreational => "Find a surfing camp",
            Scenario::Travel => "Arrange a trip abroad",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "academic" => Some(Scenario::Academic),
            "practical" => Some(Scenario::Practical),
            "recreational" => Some(Scenario::Recreational),
            "travel" => Some(Scenario::Travel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub scenario: Scenario,
    pub title: String,
    pub description: String,
    pub level: u32,
    /// True when the task needs further decomposition.
    pub gold_label: bool,
}

/// Parses `id|scenario|title|description|level|gold_label` lines. Blank
/// lines and `#` comments are skipped.
pub fn parse_suite(text: &str) -> Result<Vec<TestCase>> {
    let mut cases: Vec<TestCase> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::MalformedSuite { line: i + 1, reason };
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        for (name, value) in ["id", "scenario", "title", "description"].iter().zip(&fields) {
            if value.is_empty() {
                return Err(bad(format!("{name} is empty")));
            }
        }
        let scenario = Scenario::parse(fields[1]).ok_or_else(|| bad(format!("unknown scenario `{}`", fields[1])))?;
        let level = fields[4].parse().map_err(|_| bad(format!("level `{}` is not a non-negative integer", fields[4])))?;
        let gold_label = match fields[5] {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("gold_label `{other}` is not true or false"))),
        };
        if cases.iter().any(|c| c.id == fields[0]) {
            return Err(bad(format!("duplicate id `{}`", fields[0])));
        }
        cases.push(TestCase {
            id: fields[0].to_owned(),
            scenario,
            title: fields[2].to_owned(),
            description: fields[3].to_owned(),
            level,
            gold_label,
        });
    }
    Ok(cases)
}

pub fn load_suite(path: &Path) -> Result<Vec<TestCase>> {
    parse_suite(&std::fs::read_to_string(path)?)
}

pub fn bundled_suite() -> Vec<TestCase> {
    parse_suite(BUNDLED_SUITE).expect("bundled suite is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub runs: usize,
    /// Concurrent cases within a run. Use 1 for scripted providers.
    pub parallelism: usize,
    pub params: RequestParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { runs: 5, parallelism: 4, params: RequestParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub strategy: DetectionStrategy,
    pub run: usize,
    pub case_id: String,
    pub predicted: Option<bool>,
    pub gold: bool,
    pub correct: bool,
    pub unparseable: bool,
    /// Provider or prompt failure for this case, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: DetectionStrategy,
    pub mean_accuracy: f64,
    /// Sample standard deviation across runs; 0 for a single run.
    pub stddev: f64,
    pub runs: usize,
    pub run_accuracies: Vec<f64>,
    pub unparseable: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provider: String,
    pub generated_at: DateTime<Utc>,
    pub summaries: Vec<StrategySummary>,
    pub records: Vec<CaseRecord>,
}

fn score_case(
    case: &TestCase,
    strategy: DetectionStrategy,
    run: usize,
    provider: &dyn LlmProvider,
    prompts: &PromptLibrary,
    params: RequestParams,
) -> CaseRecord {
    let mut record = CaseRecord {
        strategy,
        run,
        case_id: case.id.clone(),
        predicted: None,
        gold: case.gold_label,
        correct: false,
        unparseable: false,
        error: None,
    };
    let verdict = (|| -> Result<_> {
        let draft = if strategy.includes_draft() {
            let prompt = prompts.render(
                TemplateId::GenerateDraft,
                &[
                    ("main_purpose", case.scenario.goal()),
                    ("user_context", EMPTY_CONTEXT),
                    ("current_task", &case.title),
                    ("task_description", &case.description),
                ],
            )?;
            Some(provider.complete(&CompletionRequest::new(TAG_DRAFT, prompt.messages(), params))?.text)
        } else {
            None
        };
        let level = strategy.includes_level().then_some(case.level);
        let prompt = prompts.detection_prompt(strategy, &case.title, &case.description, level, draft.as_deref())?;
        let reply = provider.complete(&CompletionRequest::new(TAG_DETECT, prompt.messages(), params))?;
        Ok(parse_yes_no(&reply.text, strategy.polarity()))
    })();
    match verdict {
        Ok(Ok(v)) => {
            record.predicted = Some(v.needs_decomposition);
            record.correct = v.needs_decomposition == case.gold_label;
        }
        Ok(Err(_)) => record.unparseable = true,
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every strategy `config.runs` times over `suite`.
pub fn run_eval(
    suite: &[TestCase],
    strategies: &[DetectionStrategy],
    config: &EvalConfig,
    provider: &dyn LlmProvider,
    prompts: &PromptLibrary,
    generated_at: DateTime<Utc>,
) -> Result<EvalReport> {
    if config.runs == 0 {
        return Err(Error::InvalidRequest("runs must be at least 1".into()));
    }
    if suite.is_empty() {
        return Err(Error::InvalidRequest("the suite has no cases".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidRequest(format!("cannot start eval workers: {e}")))?;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &strategy in strategies {
        let mut accuracies = Vec::with_capacity(config.runs);
        let (mut unparseable, mut errors) = (0, 0);
        for run in 1..=config.runs {
            let run_records: Vec<CaseRecord> = if config.parallelism <= 1 {
                suite.iter().map(|c| score_case(c, strategy, run, provider, prompts, config.params)).collect()
            } else {
                pool.install(|| {
                    suite.par_iter().map(|c| score_case(c, strategy, run, provider, prompts, config.params)).collect()
                })
            };
            let correct = run_records.iter().filter(|r| r.correct).count();
            accuracies.push(correct as f64 / suite.len() as f64);
            unparseable += run_records.iter().filter(|r| r.unparseable).count();
            errors += run_records.iter().filter(|r| r.error.is_some()).count();
            records.extend(run_records);
        }
        let (mean_accuracy, stddev) = mean_sd(&accuracies);
        summaries.push(StrategySummary {
            strategy,
            mean_accuracy,
            stddev,
            runs: config.runs,
            run_accuracies: accuracies,
            unparseable,
            errors,
        });
    }
    Ok(EvalReport { provider: provider.model().to_owned(), generated_at, summaries, records })
}

/// Accuracy table, rows in the fixed strategy order.
pub fn render_report(report: &EvalReport) -> String {
    let mut rows: Vec<&StrategySummary> = report.summaries.iter().collect();
    rows.sort_by_key(|s| DetectionStrategy::ALL.iter().position(|x| *x == s.strategy));
    let mut out = String::new();
    let _ = writeln!(out, "{:<22} {:>5} {:>6} {:>5} {:>12} {:>7}", "Prompting technique", "Mean", "SD", "Runs", "Unparseable", "Errors");
    for s in rows {
        let _ = writeln!(
            out,
            "{:<22} {:>5.2} {:>6.3} {:>5} {:>12} {:>7}",
            s.strategy.label(),
            s.mean_accuracy,
            s.stddev,
            s.runs,
            s.unparseable,
            s.errors
        );
    }
    out
}

/// One row per strategy, run and case.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("strategy,run,case_id,predicted,gold,correct,unparseable\n");
    for r in &report.records {
        let predicted = r.predicted.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.strategy, r.run, r.case_id, predicted, r.gold, r.correct, r.unparseable);
    }
    out
}

fn strategy_of(prompts: &PromptLibrary, system: &str) -> Option<DetectionStrategy> {
    DetectionStrategy::ALL.into_iter().find(|s| prompts.detection_template(*s).system_text.trim() == system.trim())
}

/// A mock that always answers correctly: it finds the case by its task text,
/// the strategy by its system prompt, and phrases the gold label in that
/// strategy's polarity.
pub fn oracle_provider(suite: &[TestCase], prompts: PromptLibrary) -> MockProvider {
    let cases: Vec<(String, bool)> =
        suite.iter().map(|c| (format!("task {}: {}.", c.title, c.description.trim_end_matches('.')), c.gold_label)).collect();
    MockProvider::from_fn(move |req| {
        if req.tag == TAG_DRAFT {
            return Ok("A first draft for this task.".into());
        }
        let user = req.last_user_message().unwrap_or_default();
        let system = req.messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let strategy = strategy_of(&prompts, system).ok_or_else(|| Error::ScriptMismatch("detection system prompt".into()))?;
        let gold = cases
            .iter()
            .filter(|(needle, _)| user.contains(needle.trim_end_matches('.')))
            .max_by_key(|(needle, _)| needle.len())
            .map(|(_, g)| *g)
            .ok_or_else(|| Error::ScriptMismatch("suite case".into()))?;
        let yes = match strategy.polarity() {
            Polarity::YesMeansDecompose => gold,
            Polarity::YesMeansActionable => !gold,
        };
        Ok(format!("Reasoning about the task.\nAnswer: {}", if yes { "Yes" } else { "No" }))
    })
}

/// A mock that answers "Yes" to every detection request.
pub fn always_yes_provider() -> MockProvider {
    MockProvider::from_fn(|req| Ok(if req.tag == TAG_DRAFT { "A first draft.".into() } else { "Answer: Yes".into() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, FixedClock};

    #[test]
    fn bundled_suite_shape() {
        let suite = bundled_suite();
        assert_eq!(suite.len(), 40);
        for s in [Scenario::Academic, Scenario::Practical, Scenario::Recreational, Scenario::Travel] {
            assert_eq!(suite.iter().filter(|c| c.scenario == s).count(), 10);
        }
        let example = suite.iter().find(|c| c.title == "Compile a List of Potential Universities").unwrap();
        assert!(!example.gold_label);
        assert!(example.description.starts_with("start by identifying the universities"));
    }

    #[test]
    fn malformed_lines() {
        let err = parse_suite("# c\nx|academic|T||1|true").unwrap_err();
        assert!(matches!(err, Error::MalformedSuite { line: 2, ref reason } if reason.contains("description")));
        assert!(matches!(parse_suite("x|academic|T|d|1|yes"), Err(Error::MalformedSuite { line: 1, .. })));
        assert!(matches!(parse_suite("x|academic|T|d|-1|true"), Err(Error::MalformedSuite { .. })));
        assert!(matches!(parse_suite("x|space|T|d|1|true"), Err(Error::MalformedSuite { .. })));
        assert!(matches!(parse_suite("x|academic|T|d|1"), Err(Error::MalformedSuite { .. })));
        assert!(matches!(parse_suite("x|academic|T|d|1|true\nx|travel|U|d|1|false"), Err(Error::MalformedSuite { line: 2, .. })));
        assert!(matches!(load_suite(Path::new("/nonexistent/suite.txt")), Err(Error::Io(_))));
    }

    #[test]
    fn mean_and_sample_sd() {
        let (m, s) = mean_sd(&[0.5, 0.7]);
        assert!((m - 0.6).abs() < 1e-12);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_sd(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn errors_and_garbage_are_tallied_not_fatal() {
        let suite = parse_suite("a|academic|T|d|1|true\nb|travel|U|e|2|false").unwrap();
        let garbage = MockProvider::from_fn(|req| {
            if req.last_user_message().unwrap_or_default().contains("task T:") {
                Err(Error::ProviderTimeout("slow".into()))
            } else {
                Ok("maybe".into())
            }
        });
        let config = EvalConfig { runs: 2, parallelism: 1, ..Default::default() };
        let report =
            run_eval(&suite, &[DetectionStrategy::ZeroShot], &config, &garbage, &PromptLibrary::builtin(), FixedClock::default().now())
                .unwrap();
        let s = &report.summaries[0];
        assert_eq!((s.mean_accuracy, s.unparseable, s.errors), (0.0, 2, 2));
        assert_eq!(report.records.len(), 4);
    }

    #[test]
    fn zero_runs_rejected() {
        let config = EvalConfig { runs: 0, ..Default::default() };
        let r = run_eval(&bundled_suite(), &DetectionStrategy::ALL, &config, &always_yes_provider(), &PromptLibrary::builtin(), Utc::now());
        assert!(matches!(r, Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn report_rows_follow_fixed_order() {
        let config = EvalConfig { runs: 1, parallelism: 1, ..Default::default() };
        let mut order = DetectionStrategy::ALL.to_vec();
        order.reverse();
        let report = run_eval(&bundled_suite(), &order, &config, &always_yes_provider(), &PromptLibrary::builtin(), Utc::now()).unwrap();
        let table = render_report(&report);
        let labels: Vec<&str> = table.lines().skip(1).map(|l| l[..22].trim_end()).collect();
        let expected: Vec<&str> = DetectionStrategy::ALL.iter().map(|s| s.label()).collect();
        assert_eq!(labels, expected);
        assert!(table.lines().nth(1).unwrap().contains(" 0.45 "), "{table}");
        let csv = report_csv(&report);
        assert_eq!(csv.lines().count(), 1 + 6 * 40);
        assert!(csv.starts_with("strategy,run,case_id,predicted,gold,correct,unparseable\n"));
        let empty = EvalReport { provider: "m".into(), generated_at: Utc::now(), summaries: vec![], records: vec![] };
        assert_eq!(render_report(&empty).lines().count(), 1);
    }
}
