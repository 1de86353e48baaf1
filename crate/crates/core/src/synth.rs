//! Seeded generator of labeled failure corpora.
//!
//! Flaky failures come in signatures: every occurrence of a signature shares
//! the exception type and stack trace and differs only in its message. True
//! failures each get their own trace. Stack lines of code under test use line
//! numbers 1-499 for flaky failures and 500-999 for true ones, so a flaky and
//! a true trace can never coincide even when they share an exception type.

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Corpus, FailureRecord, Label, StackFrame, TestId};
use crate::parse::simple_exception_name;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("generator config: {0}")]
    Toml(#[from] toml::de::Error),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Constant {
        value: u64,
    },
    /// Inclusive on both ends.
    Uniform {
        min: u64,
        max: u64,
    },
    /// `min` plus the number of failures before the first success with
    /// probability `p`, optionally capped at `max`.
    Geometric {
        p: f64,
        #[serde(default)]
        min: u64,
        #[serde(default)]
        max: Option<u64>,
    },
}

impl Distribution {
    fn validate(&self, field: &str) -> Result<(), SynthError> {
        match *self {
            Distribution::Constant { .. } => Ok(()),
            Distribution::Uniform { min, max } if min > max => {
                Err(invalid(format!("{field}: min {min} > max {max}")))
            }
            Distribution::Uniform { .. } => Ok(()),
            Distribution::Geometric { p, .. } if !(p > 0.0 && p <= 1.0) => {
                Err(invalid(format!("{field}: p must be in (0, 1], got {p}")))
            }
            Distribution::Geometric {
                min,
                max: Some(max),
                ..
            } if min > max => Err(invalid(format!("{field}: min {min} > max {max}"))),
            Distribution::Geometric { .. } => Ok(()),
        }
    }

    /// Whether every draw is zero.
    fn always_zero(&self) -> bool {
        match *self {
            Distribution::Constant { value } => value == 0,
            Distribution::Uniform { max, .. } => max == 0,
            Distribution::Geometric { min, max, .. } => min == 0 && max == Some(0),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Uniform { min, max } => rng.gen_range(min..=max),
            Distribution::Geometric { p, min, max } => {
                let extra = Geometric::new(p).expect("validated p").sample(rng);
                let value = min.saturating_add(extra);
                max.map_or(value, |m| value.min(m))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExceptionSpec {
    pub name: String,
    pub weight: f64,
    pub shared_across_labels: bool,
    /// The only label this exception is used for; required when not shared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl ExceptionSpec {
    fn usable_for(&self, label: Label) -> bool {
        self.shared_across_labels || self.label == Some(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub projects: usize,
    pub tests_per_project: Distribution,
    pub flaky_signatures_per_test: Distribution,
    pub flaky_occurrences_per_signature: Distribution,
    pub true_failures_per_test: Distribution,
    pub exception_pool: Vec<ExceptionSpec>,
    /// Put random host addresses and timestamps into messages.
    #[serde(default)]
    pub volatile_message_tokens: bool,
    /// Number of code-under-test frames per trace.
    pub frame_depth: DepthRange,
}

const MAX_FRAME_DEPTH: usize = 256;

fn valid_exception_name(name: &str) -> bool {
    !name.is_empty()
        && name.split('.').all(|seg| !seg.is_empty())
        && name
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '.' | '_' | '$'))
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<GeneratorConfig, SynthError> {
        let cfg: GeneratorConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks bounds in field order and reports the first violation.
    pub fn validate(&self) -> Result<(), SynthError> {
        self.tests_per_project.validate("tests_per_project")?;
        self.flaky_signatures_per_test
            .validate("flaky_signatures_per_test")?;
        self.flaky_occurrences_per_signature
            .validate("flaky_occurrences_per_signature")?;
        self.true_failures_per_test
            .validate("true_failures_per_test")?;
        for (i, spec) in self.exception_pool.iter().enumerate() {
            if !valid_exception_name(&spec.name) {
                return Err(invalid(format!(
                    "exception_pool[{i}].name {:?} is not an exception name",
                    spec.name
                )));
            }
            if !(spec.weight.is_finite() && spec.weight > 0.0) {
                return Err(invalid(format!(
                    "exception_pool[{i}].weight must be positive, got {}",
                    spec.weight
                )));
            }
            if !spec.shared_across_labels && spec.label.is_none() {
                return Err(invalid(format!(
                    "exception_pool[{i}].label is required when shared_across_labels is false"
                )));
            }
        }
        let flaky_possible = !self.flaky_signatures_per_test.always_zero()
            && !self.flaky_occurrences_per_signature.always_zero();
        if flaky_possible
            && !self
                .exception_pool
                .iter()
                .any(|s| s.usable_for(Label::Flaky))
        {
            return Err(invalid(
                "exception_pool has no exception usable for flaky failures",
            ));
        }
        if !self.true_failures_per_test.always_zero()
            && !self
                .exception_pool
                .iter()
                .any(|s| s.usable_for(Label::True))
        {
            return Err(invalid(
                "exception_pool has no exception usable for true failures",
            ));
        }
        let DepthRange { min, max } = self.frame_depth;
        if min > max {
            return Err(invalid(format!("frame_depth: min {min} > max {max}")));
        }
        if max > MAX_FRAME_DEPTH {
            return Err(invalid(format!(
                "frame_depth: max {max} exceeds {MAX_FRAME_DEPTH}"
            )));
        }
        Ok(())
    }
}

/// Every value drawn from the count distributions, in draw order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub tests_per_project: Vec<u64>,
    pub flaky_signatures_per_test: Vec<u64>,
    pub flaky_occurrences_per_signature: Vec<u64>,
    pub true_failures_per_test: Vec<u64>,
}

pub fn generate(cfg: &GeneratorConfig) -> Result<Corpus, SynthError> {
    generate_with_log(cfg).map(|(corpus, _)| corpus)
}

const AREAS: [&str; 4] = ["core", "io", "net", "util"];
const CLASSES: [&str; 6] = ["Cluster", "Client", "Store", "Worker", "Journal", "Cache"];
const METHODS: [&str; 7] = ["start", "run", "read", "write", "flush", "connect", "apply"];
const RUNTIME_FRAMES: [&str; 4] = [
    "java.net.InetAddress.getLocalHost(InetAddress.java:1501)",
    "java.util.concurrent.FutureTask.get(FutureTask.java:206)",
    "java.lang.Thread.sleep(Native Method)",
    "java.io.FileInputStream.open0(Native Method)",
];
const RUNNER_FRAMES: [&str; 5] = [
    "sun.reflect.NativeMethodAccessorImpl.invoke0(Native Method)",
    "sun.reflect.NativeMethodAccessorImpl.invoke(NativeMethodAccessorImpl.java:62)",
    "java.lang.reflect.Method.invoke(Method.java:498)",
    "org.junit.runners.model.FrameworkMethod$1.runReflectiveCall(FrameworkMethod.java:50)",
    "org.junit.runners.ParentRunner.run(ParentRunner.java:363)",
];

struct Generator<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    log: GenerationLog,
    flaky_pool: Vec<&'a ExceptionSpec>,
    true_pool: Vec<&'a ExceptionSpec>,
    /// Strictly increasing, so volatile messages never repeat.
    clock: u64,
}

fn frame(text: &str) -> StackFrame {
    StackFrame::parse(text).expect("generated frame text is well formed")
}

impl<'a> Generator<'a> {
    fn draw(
        &mut self,
        which: fn(&GeneratorConfig) -> &Distribution,
        log: fn(&mut GenerationLog) -> &mut Vec<u64>,
    ) -> u64 {
        let value = which(self.cfg).sample(&mut self.rng);
        log(&mut self.log).push(value);
        value
    }

    fn pick_exception(&mut self, label: Label) -> &'a ExceptionSpec {
        let pool = match label {
            Label::Flaky => &self.flaky_pool,
            Label::True => &self.true_pool,
        };
        let weights = WeightedIndex::new(pool.iter().map(|s| s.weight)).expect("validated weights");
        pool[weights.sample(&mut self.rng)]
    }

    fn line(&mut self, label: Label) -> u32 {
        match label {
            Label::Flaky => self.rng.gen_range(1..500),
            Label::True => self.rng.gen_range(500..1000),
        }
    }

    fn trace(&mut self, package: &str, test: &TestId, label: Label) -> Vec<StackFrame> {
        let mut frames = Vec::new();
        let runtime = self.rng.gen_range(0..=2);
        for text in RUNTIME_FRAMES.choose_multiple(&mut self.rng, runtime) {
            frames.push(frame(text));
        }
        let depth = self
            .rng
            .gen_range(self.cfg.frame_depth.min..=self.cfg.frame_depth.max);
        for _ in 0..depth {
            let area = AREAS.choose(&mut self.rng).unwrap();
            let class = CLASSES.choose(&mut self.rng).unwrap();
            let method = METHODS.choose(&mut self.rng).unwrap();
            let line = self.line(label);
            frames.push(frame(&format!(
                "{package}.{area}.{class}.{method}({class}.java:{line})"
            )));
        }
        if depth > 0 && self.rng.gen_bool(0.2) {
            let n = self.rng.gen_range(1..100);
            let at = self.rng.gen_range(frames.len() - depth + 1..=frames.len());
            frames.insert(
                at,
                frame(&format!(
                    "sun.reflect.GeneratedMethodAccessor{n}.invoke(Unknown Source)"
                )),
            );
        }
        let simple = test.class_fqn.rsplit('.').next().unwrap_or(&test.class_fqn);
        let method = if self.rng.gen_bool(0.75) {
            test.method.as_str()
        } else {
            "setUp"
        };
        let line = self.line(label);
        frames.push(frame(&format!(
            "{}.{method}({simple}.java:{line})",
            test.class_fqn
        )));
        frames.extend(RUNNER_FRAMES.iter().map(|t| frame(t)));
        frames
    }

    fn message(&mut self, exception: &str, test: &TestId) -> String {
        if !self.cfg.volatile_message_tokens {
            return format!("{exception} in {}", test.method);
        }
        self.clock += self.rng.gen_range(1..60_000);
        let ip: [u8; 4] = [
            10,
            self.rng.gen(),
            self.rng.gen(),
            self.rng.gen::<u8>().max(1),
        ];
        format!(
            "ip-{}-{}-{}-{}: {} at {}",
            ip[0], ip[1], ip[2], ip[3], exception, self.clock
        )
    }

    fn run(mut self) -> (Corpus, GenerationLog) {
        let mut corpus = Corpus::new();
        for p in 0..self.cfg.projects {
            let project = format!("project-{p:02}");
            let package = format!("org.synth.p{p}");
            let tests = self.draw(|c| &c.tests_per_project, |l| &mut l.tests_per_project);
            for j in 0..tests {
                let test = TestId::new(
                    &project,
                    format!("{package}.Component{}Test", j / 2),
                    format!("testCase{j}"),
                );
                let signatures = self.draw(
                    |c| &c.flaky_signatures_per_test,
                    |l| &mut l.flaky_signatures_per_test,
                );
                for _ in 0..signatures {
                    let spec = self.pick_exception(Label::Flaky);
                    let exception = simple_exception_name(&spec.name).to_string();
                    let frames = self.trace(&package, &test, Label::Flaky);
                    let occurrences = self.draw(
                        |c| &c.flaky_occurrences_per_signature,
                        |l| &mut l.flaky_occurrences_per_signature,
                    );
                    for _ in 0..occurrences {
                        let message = self.message(&exception, &test);
                        let rec = FailureRecord::new(test.clone(), exception.clone(), message)
                            .with_frames(frames.clone())
                            .with_label(Label::Flaky);
                        corpus.insert(rec).expect("labeled record");
                    }
                }
                let true_failures = self.draw(
                    |c| &c.true_failures_per_test,
                    |l| &mut l.true_failures_per_test,
                );
                for _ in 0..true_failures {
                    let spec = self.pick_exception(Label::True);
                    let exception = simple_exception_name(&spec.name).to_string();
                    let frames = self.trace(&package, &test, Label::True);
                    let message = self.message(&exception, &test);
                    let rec = FailureRecord::new(test.clone(), exception, message)
                        .with_frames(frames)
                        .with_label(Label::True);
                    corpus.insert(rec).expect("labeled record");
                }
            }
        }
        (corpus, self.log)
    }
}

pub fn generate_with_log(cfg: &GeneratorConfig) -> Result<(Corpus, GenerationLog), SynthError> {
    cfg.validate()?;
    let generator = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        log: GenerationLog::default(),
        flaky_pool: cfg
            .exception_pool
            .iter()
            .filter(|s| s.usable_for(Label::Flaky))
            .collect(),
        true_pool: cfg
            .exception_pool
            .iter()
            .filter(|s| s.usable_for(Label::True))
            .collect(),
        clock: 1_500_000_000_000,
    };
    Ok(generator.run())
}
