//! Command-line front end.
//!
//! Exit codes: 0 success (and a flaky verdict from `classify`), 1 usage
//! error, 2 data error, 3 a true-failure verdict from `classify`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::classifier::{
    extract_features, train_decision_tree, train_naive_bayes, FeatureConfig, TreeParams,
    DEFAULT_THRESHOLD,
};
use crate::corpus_xml::{read_corpus_xml, write_corpus_xml};
use crate::dedup::{repetitiveness, signature, triage, MatchConfig, MatchMode, MatchScope};
use crate::eval::{
    exception_frequency, per_project, score_matching, stratified_cv, CvConfig, MatchingScore,
    Method, DEFAULT_K,
};
use crate::model::{Corpus, Label, TestId, TestUniverse};
use crate::parse::{parse_failure_text_with, ParseOptions};
use crate::report;
use crate::synth::{generate, GeneratorConfig};
use crate::tfidf::classify_nn;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRUE_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "flaketriage",
    version,
    about = "Triage test failures as flaky or true from their logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Match,
    Tree,
    Bayes,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    PerTest,
    CrossTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    ExceptionOnly,
}

impl From<ScopeArg> for MatchScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::PerTest => MatchScope::PerTest,
            ScopeArg::CrossTest => MatchScope::CrossTest,
        }
    }
}

impl From<ModeArg> for MatchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => MatchMode::Full,
            ModeArg::ExceptionOnly => MatchMode::ExceptionOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse one failure log and print its record and signature.
    Parse {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Fully-qualified test name, `pkg.Class.method`.
        #[arg(long)]
        test: String,
        #[arg(long)]
        project: String,
        /// Keep frames from `Caused by:` sections.
        #[arg(long)]
        follow_caused_by: bool,
    },
    /// Print per-project repetition statistics of flaky failures.
    CorpusStats {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
    },
    /// Classify one failure against a labeled corpus.
    Classify {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        failure: PathBuf,
        #[arg(long)]
        test: String,
        /// Defaults to the project that already contains the test, or the
        /// only project of the corpus.
        #[arg(long)]
        project: Option<String>,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "per-test")]
        scope: ScopeArg,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Evaluate a method on a labeled corpus.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = DEFAULT_K as u32, value_parser = clap::value_parser!(u32).range(2..))]
        k: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Oversample the minority class of each training split to 10%.
        #[arg(long)]
        oversample: bool,
        #[arg(long, value_enum, default_value = "per-test")]
        scope: ScopeArg,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
        /// Projects evaluated in parallel.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: u32,
        /// Also write `<project>.txt` and `<project>.jsonl` here.
        #[arg(long, value_name = "DIR")]
        report_dir: Option<PathBuf>,
    },
    /// Generate a synthetic labeled corpus.
    Generate {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_DATA
        }
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_corpus_xml(BufReader::new(file))
        .with_context(|| format!("cannot read corpus {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Resolves a test name to a [`TestId`], inferring the project if needed.
fn resolve_test(corpus: &Corpus, name: &str, project: Option<&str>) -> Result<TestId> {
    if let Some(project) = project {
        return Ok(TestId::from_full_name(project, name)?);
    }
    let owners: Vec<&str> = corpus
        .projects()
        .filter(|(_, tests)| tests.keys().any(|t| t.full_name() == name))
        .map(|(p, _)| p)
        .collect();
    let project = match owners.as_slice() {
        [one] => *one,
        [] => {
            let names: Vec<&str> = corpus.project_names().collect();
            match names.as_slice() {
                [only] => *only,
                _ => bail!("cannot infer the project of {name}; pass --project"),
            }
        }
        _ => bail!("test {name} exists in several projects; pass --project"),
    };
    Ok(TestId::from_full_name(project, name)?)
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Parse {
            input,
            test,
            project,
            follow_caused_by,
        } => {
            let test = TestId::from_full_name(&project, &test)?;
            let text = read_text(&input)?;
            let parsed =
                parse_failure_text_with(&text, test.clone(), ParseOptions { follow_caused_by })?;
            for d in &parsed.diagnostics {
                writeln!(err, "warning: {d}")?;
            }
            let rec = &parsed.record;
            let nf = MatchConfig::default().normalize(rec);
            let universe = TestUniverse::new([&test]);
            writeln!(out, "test: {}", rec.test)?;
            writeln!(out, "exception: {}", parsed.qualified_exception)?;
            writeln!(out, "message: {}", rec.message)?;
            writeln!(out, "frames: {}", rec.frames.len())?;
            for f in &rec.frames {
                writeln!(out, "  at {}", f.raw)?;
            }
            writeln!(out, "truncation: {}", nf.truncation_basis.as_str())?;
            writeln!(out, "kept_frames: {}", nf.kept_frames.len())?;
            for (mode, scope) in [
                (MatchMode::Full, MatchScope::PerTest),
                (MatchMode::Full, MatchScope::CrossTest),
            ] {
                let sig = signature(&nf, mode, scope, &universe);
                writeln!(
                    out,
                    "signature ({}, {}): {sig}",
                    mode.as_str(),
                    scope.as_str()
                )?;
            }
            Ok(EXIT_OK)
        }
        Command::CorpusStats { corpus } => {
            let corpus = load_corpus(&corpus)?;
            out.write_all(report::repetitiveness_table(&repetitiveness(&corpus)).as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Classify {
            corpus,
            failure,
            test,
            project,
            method,
            scope,
            mode,
        } => {
            let corpus = load_corpus(&corpus)?;
            let test = resolve_test(&corpus, &test, project.as_deref())?;
            let parsed = parse_failure_text_with(
                &read_text(&failure)?,
                test.clone(),
                ParseOptions::default(),
            )?;
            for d in &parsed.diagnostics {
                writeln!(err, "warning: {d}")?;
            }
            let label = classify(
                &corpus,
                &parsed.record,
                method,
                scope.into(),
                mode.into(),
                out,
            )?;
            Ok(if label == Label::Flaky {
                EXIT_OK
            } else {
                EXIT_TRUE_FAILURE
            })
        }
        Command::Evaluate {
            corpus,
            method,
            k,
            seed,
            oversample,
            scope,
            mode,
            jobs,
            report_dir,
        } => {
            let corpus = load_corpus(&corpus)?;
            let options = EvalOptions {
                method,
                k: k as usize,
                seed,
                oversample,
                scope: scope.into(),
                mode: mode.into(),
                jobs: jobs as usize,
                report_dir,
            };
            evaluate(&corpus, &options, out)?;
            Ok(EXIT_OK)
        }
        Command::Generate {
            config,
            out: path,
            seed,
        } => {
            let mut cfg = GeneratorConfig::from_toml_str(&read_text(&config)?)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let corpus = generate(&cfg)?;
            let file = fs::File::create(&path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            let mut writer = std::io::BufWriter::new(file);
            write_corpus_xml(&corpus, &mut writer)?;
            writer.flush()?;
            writeln!(
                out,
                "generated {} failures ({} flaky, {} true) in {} projects",
                corpus.len(),
                corpus.count(Label::Flaky),
                corpus.count(Label::True),
                corpus.project_names().count()
            )?;
            Ok(EXIT_OK)
        }
    }
}

fn classify(
    corpus: &Corpus,
    rec: &crate::model::FailureRecord,
    method: MethodArg,
    scope: MatchScope,
    mode: MatchMode,
    out: &mut dyn Write,
) -> Result<Label> {
    let config = MatchConfig::default();
    match method {
        MethodArg::Match => {
            let verdict = triage(&config.normalize(rec), corpus, mode, scope);
            writeln!(out, "{} ({})", verdict.predicted, verdict.basis)?;
            for id in &verdict.evidence {
                writeln!(out, "evidence: {id}")?;
            }
            Ok(verdict.predicted)
        }
        MethodArg::Tfidf => {
            let nn = classify_nn(rec, corpus)?;
            writeln!(out, "{} ({})", nn.verdict.predicted, nn.verdict.basis)?;
            writeln!(out, "similarity: {:.6}", nn.similarity)?;
            for id in &nn.verdict.evidence {
                writeln!(out, "evidence: {id}")?;
            }
            Ok(nn.verdict.predicted)
        }
        MethodArg::Tree | MethodArg::Bayes => {
            let project = &rec.test.project;
            let universe = TestUniverse::of_project(corpus, project).with(&rec.test);
            let features = FeatureConfig::for_project(&universe);
            let data: Vec<_> = corpus
                .project_records(project)
                .map(|(id, r)| {
                    (
                        extract_features(&config.normalize(r), &universe, &features),
                        id.label,
                    )
                })
                .collect();
            let model = if method == MethodArg::Tree {
                train_decision_tree(&data, TreeParams::default())
            } else {
                train_naive_bayes(&data, 1.0)
            }
            .with_context(|| format!("no labeled history in project {project:?}"))?;
            let fv = extract_features(&config.normalize(rec), &universe, &features);
            let label = model.predict(&fv);
            writeln!(out, "{label} ({})", model.kind().as_str())?;
            writeln!(out, "features: {}", serde_json::to_string(&fv)?)?;
            Ok(label)
        }
    }
}

struct EvalOptions {
    method: MethodArg,
    k: usize,
    seed: u64,
    oversample: bool,
    scope: MatchScope,
    mode: MatchMode,
    jobs: usize,
    report_dir: Option<PathBuf>,
}

fn evaluate(corpus: &Corpus, o: &EvalOptions, out: &mut dyn Write) -> Result<()> {
    let projects: Vec<String> = corpus.project_names().map(str::to_string).collect();
    match o.method {
        MethodArg::Match => {
            let scores: Vec<MatchingScore> = per_project(&projects, o.jobs, |p| {
                score_matching(&corpus.only_project(p), o.mode, o.scope)
                    .projects
                    .remove(p)
                    .unwrap_or_default()
            })?;
            writeln!(
                out,
                "== match ({}, {}) ==",
                o.mode.as_str(),
                o.scope.as_str()
            )?;
            let rows: Vec<(&str, &MatchingScore)> =
                projects.iter().map(String::as_str).zip(&scores).collect();
            out.write_all(report::matching_table(rows.iter().copied()).as_bytes())?;
            if let Some(dir) = &o.report_dir {
                for (project, score) in rows {
                    let text = report::matching_table([(project, score)]);
                    report::write_project_report(
                        dir,
                        project,
                        &text,
                        &report::matching_jsonl(project, "match", score),
                    )?;
                }
            }
        }
        method => {
            let method = match method {
                MethodArg::Tree => Method::Tree(TreeParams::default()),
                MethodArg::Bayes => Method::Bayes { smoothing: 1.0 },
                MethodArg::Tfidf => Method::Tfidf,
                MethodArg::Match => unreachable!(),
            };
            let cfg = CvConfig {
                k: o.k,
                seed: o.seed,
                oversample: o.oversample.then_some(DEFAULT_THRESHOLD),
                jobs: o.jobs,
                ..CvConfig::new(method)
            };
            let cv = stratified_cv(corpus, &cfg)?;
            let oversampled = if o.oversample { ", oversampled" } else { "" };
            writeln!(
                out,
                "== {} (k={}, seed={}{oversampled}) ==",
                method.name(),
                o.k,
                o.seed
            )?;
            out.write_all(report::cv_table(cv.projects.values()).as_bytes())?;
            for s in &cv.skipped {
                writeln!(out, "skipped {}: {}", s.project, s.reason)?;
            }
            if let Some(dir) = &o.report_dir {
                for r in cv.projects.values() {
                    let text = report::cv_table([r]);
                    report::write_project_report(
                        dir,
                        &r.project,
                        &text,
                        &report::cv_jsonl(r, method.name()),
                    )?;
                }
            }
        }
    }
    for mode in [MatchMode::Full, MatchMode::ExceptionOnly] {
        writeln!(out, "== exceptions ({}) ==", mode.as_str())?;
        out.write_all(report::exception_table(&exception_frequency(corpus, mode)).as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("flaketriage").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = run_capture(&["classify", "--corpus", "x.xml"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--failure"));
        assert_eq!(
            run_capture(&["evaluate", "--corpus", "x", "--method", "tree", "--k", "1"]).0,
            EXIT_USAGE
        );
        assert_eq!(run_capture(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("corpus-stats"));
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let (code, _, err) = run_capture(&["corpus-stats", "--corpus", "/nonexistent/corpus.xml"]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn project_inference() {
        let t = TestId::new("a", "x.T", "m");
        let corpus = Corpus::from_records([
            crate::model::FailureRecord::new(t.clone(), "E", "").with_label(Label::Flaky)
        ])
        .unwrap();
        assert_eq!(resolve_test(&corpus, "x.T.m", None).unwrap(), t);
        assert_eq!(resolve_test(&corpus, "x.U.n", None).unwrap().project, "a");
        assert_eq!(
            resolve_test(&corpus, "x.U.n", Some("b")).unwrap().project,
            "b"
        );
        assert!(resolve_test(&Corpus::new(), "x.U.n", None).is_err());
    }
}
