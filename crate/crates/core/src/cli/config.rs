//! Scenario files: `[section]` headers and `key = value` lines.
//!
//! ```text
//! tasks = solve, verify
//!
//! [params]            # or [constants] with e, m, c, L (and optional hbar)
//! alpha = 0.5
//! tau = 0.1
//!
//! [ics]
//! v_o = 1
//! prehistory = ramp
//! kappa_q = 0.5
//!
//! [run]
//! t_end = 1.0
//! t_samples = 0, 0.5, 1.0
//!
//! [run.grid]
//! x_min = -6
//! x_max = 8
//! n = 281
//! ```
//!
//! `tasks`, `output_dir` and `action_sign_convention` may sit before the
//! first section or inside `[run]`. `#` and `;` start comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::dde::{ActionConvention, StepSpec, DEFAULT_STEPS_PER_DELAY};
use crate::error::{Error, Result};
use crate::packet::SpaceGrid;
use crate::params::{derive_params, ElectronConstants, InitialConditions, Prehistory, SimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Solve,
    Fields,
    Verify,
    Propagator,
    Reproduce,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Solve,
        Task::Fields,
        Task::Verify,
        Task::Propagator,
        Task::Reproduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Solve => "solve",
            Task::Fields => "fields",
            Task::Verify => "verify",
            Task::Propagator => "propagator",
            Task::Reproduce => "reproduce",
        }
    }

    fn needs_grid(self) -> bool {
        matches!(self, Task::Fields | Task::Propagator | Task::Reproduce)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown task `{}`", s.trim())))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the parameter set came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamSource {
    Direct,
    Constants(ElectronConstants),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t_end: f64,
    pub steps_per_delay: usize,
    pub convention: ActionConvention,
    pub grid: Option<SpaceGrid>,
    pub t_samples: Vec<f64>,
}

impl RunConfig {
    pub fn step_spec(&self) -> Result<StepSpec> {
        Ok(StepSpec::new(self.steps_per_delay, self.t_end)?.with_convention(self.convention))
    }
}

/// Test hooks that corrupt the evaluated fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebugConfig {
    pub inflate_width: f64,
    pub velocity_offset: f64,
}

impl Default for DebugConfig {
    fn default() -> Self {
        Self {
            inflate_width: 1.0,
            velocity_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: SimParams,
    pub source: ParamSource,
    pub ics: InitialConditions,
    pub run: RunConfig,
    pub tasks: Vec<Task>,
    pub output_dir: Option<PathBuf>,
    pub debug: DebugConfig,
}

impl ScenarioConfig {
    /// Replaces the task list and re-checks block dependencies.
    pub fn with_tasks(mut self, tasks: Vec<Task>) -> Result<Self> {
        self.tasks = normalize_tasks(tasks);
        self.validate()?;
        Ok(self)
    }

    pub fn has(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks requested".to_string()));
        }
        for &task in &self.tasks {
            if task.needs_grid() && self.run.grid.is_none() {
                return Err(Error::Config(format!(
                    "task `{task}` needs the `run.grid` section (x_min, x_max, n)"
                )));
            }
        }
        let tau = self.params.tau;
        let h = tau / self.run.steps_per_delay as f64;
        if self.has(Task::Verify) && self.run.t_end < 2.0 * tau + 2.0 * h {
            return Err(Error::Config(format!(
                "task `verify` needs run.t_end >= 2 tau plus two steps ({})",
                2.0 * tau + 2.0 * h
            )));
        }
        for &t in &self.run.t_samples {
            if !(0.0..=self.run.t_end).contains(&t) {
                return Err(Error::Config(format!(
                    "run.t_samples entry {t} lies outside [0, t_end = {}]",
                    self.run.t_end
                )));
            }
        }
        Ok(())
    }
}

fn normalize_tasks(mut tasks: Vec<Task>) -> Vec<Task> {
    tasks.sort();
    tasks.dedup();
    tasks
}

type Section = BTreeMap<String, (usize, String)>;

struct Document {
    sections: BTreeMap<String, Section>,
}

const TOP: &str = "";

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        TOP => &["tasks", "output_dir", "action_sign_convention"],
        "params" => &["alpha", "tau", "hbar", "mass"],
        "constants" => &["e", "m", "c", "L", "hbar"],
        "ics" => &[
            "x_o",
            "v_o",
            "a_o",
            "b_o",
            "prehistory",
            "kappa_q",
            "kappa_a",
        ],
        "run" => &[
            "tasks",
            "output_dir",
            "action_sign_convention",
            "t_end",
            "steps_per_delay",
            "t_samples",
        ],
        "run.grid" => &["x_min", "x_max", "n"],
        "debug" => &["inflate_width", "velocity_offset"],
        _ => return None,
    })
}

fn section_label(name: &str) -> String {
    if name == TOP {
        "the top level".to_string()
    } else {
        format!("[{name}]")
    }
}

fn strip_comment(line: &str) -> &str {
    line.find(['#', ';']).map_or(line, |i| &line[..i])
}

fn tokenize(text: &str) -> Result<Document> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    sections.insert(TOP.to_string(), Section::new());
    let mut current = TOP.to_string();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| {
                    Error::Config(format!("line {lineno}: unterminated section header"))
                })?
                .trim();
            if known_keys(name).is_none() || name == TOP {
                return Err(Error::Config(format!(
                    "line {lineno}: unknown section [{name}]"
                )));
            }
            if sections.contains_key(name) {
                return Err(Error::Config(format!(
                    "line {lineno}: section [{name}] repeated"
                )));
            }
            sections.insert(name.to_string(), Section::new());
            current = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        let allowed = known_keys(&current).expect("section checked on entry");
        if !allowed.contains(&key) {
            return Err(Error::Config(format!(
                "line {lineno}: unknown key `{key}` in {}",
                section_label(&current)
            )));
        }
        let section = sections.get_mut(&current).expect("inserted on entry");
        if section
            .insert(key.to_string(), (lineno, value.to_string()))
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {lineno}: key `{key}` repeated in {}",
                section_label(&current)
            )));
        }
    }
    Ok(Document { sections })
}

impl Document {
    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.get(name)
    }

    fn raw(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.section(section)?.get(key)
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((line, text)) => text.parse().map(Some).map_err(|_| {
                Error::Config(format!(
                    "line {line}: cannot parse `{text}` for `{key}` in {}",
                    section_label(section)
                ))
            }),
        }
    }

    fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.get(section, key)?.ok_or_else(|| {
            Error::Config(format!(
                "missing key `{key}` in section {}",
                section_label(section)
            ))
        })
    }

    /// A key allowed either at the top level or in `[run]`.
    fn run_level(&self, key: &str) -> Result<Option<&(usize, String)>> {
        match (self.raw(TOP, key), self.raw("run", key)) {
            (Some(_), Some((line, _))) => Err(Error::Config(format!(
                "line {line}: `{key}` given both at the top level and in [run]"
            ))),
            (a, b) => Ok(a.or(b)),
        }
    }
}

fn parse_list<T: FromStr>(line: usize, key: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("line {line}: bad entry `{s}` in `{key}`")))
        })
        .collect()
}

fn parse_convention(line: usize, text: &str) -> Result<ActionConvention> {
    match text {
        "eq313" => Ok(ActionConvention::Matched),
        "eq318" => Ok(ActionConvention::Reversed),
        other => Err(Error::Config(format!(
            "line {line}: action_sign_convention must be eq313 or eq318, got `{other}`"
        ))),
    }
}

fn parse_params(doc: &Document) -> Result<(SimParams, ParamSource)> {
    match (doc.section("params"), doc.section("constants")) {
        (Some(_), Some(_)) => Err(Error::Config(
            "give either [params] or [constants], not both".to_string(),
        )),
        (None, None) => Err(Error::Config(
            "missing section [params] (or [constants])".to_string(),
        )),
        (Some(_), None) => {
            let p = SimParams::new(
                doc.require("params", "alpha")?,
                doc.require("params", "tau")?,
                doc.get("params", "hbar")?.unwrap_or(1.0),
                doc.get("params", "mass")?.unwrap_or(1.0),
            )?;
            Ok((p, ParamSource::Direct))
        }
        (None, Some(_)) => {
            let consts = ElectronConstants::new(
                doc.require("constants", "e")?,
                doc.require("constants", "m")?,
                doc.require("constants", "c")?,
                doc.require("constants", "L")?,
            )
            .with_hbar(doc.get("constants", "hbar")?.unwrap_or(1.0));
            Ok((derive_params(&consts)?, ParamSource::Constants(consts)))
        }
    }
}

fn parse_ics(doc: &Document) -> Result<InitialConditions> {
    let d = InitialConditions::default();
    let get = |k: &str, default: f64| -> Result<f64> { Ok(doc.get("ics", k)?.unwrap_or(default)) };
    let prehistory = match doc.raw("ics", "prehistory") {
        None => Prehistory::Constant,
        Some((_, s)) if s == "constant" => Prehistory::Constant,
        Some((_, s)) if s == "ramp" => Prehistory::Ramp {
            kappa_q: get("kappa_q", 0.0)?,
            kappa_a: get("kappa_a", 0.0)?,
        },
        Some((line, s)) => {
            return Err(Error::Config(format!(
                "line {line}: prehistory must be `constant` or `ramp`, got `{s}`"
            )))
        }
    };
    if !matches!(prehistory, Prehistory::Ramp { .. }) {
        for key in ["kappa_q", "kappa_a"] {
            if let Some((line, _)) = doc.raw("ics", key) {
                return Err(Error::Config(format!(
                    "line {line}: `{key}` only applies with prehistory = ramp"
                )));
            }
        }
    }
    Ok(InitialConditions::new(
        get("x_o", d.x_o)?,
        get("v_o", d.v_o)?,
        get("a_o", d.a_o)?,
        get("b_o", d.b_o)?,
    )?
    .with_prehistory(prehistory))
}

fn parse_run(doc: &Document, tau: f64) -> Result<RunConfig> {
    let t_end = doc.get("run", "t_end")?.unwrap_or(10.0 * tau);
    let steps_per_delay = doc
        .get("run", "steps_per_delay")?
        .unwrap_or(DEFAULT_STEPS_PER_DELAY);
    let convention = match doc.run_level("action_sign_convention")? {
        None => ActionConvention::default(),
        Some((line, text)) => parse_convention(*line, text)?,
    };
    let grid = match doc.section("run.grid") {
        None => None,
        Some(_) => Some(SpaceGrid::new(
            doc.require("run.grid", "x_min")?,
            doc.require("run.grid", "x_max")?,
            doc.require("run.grid", "n")?,
        )?),
    };
    let t_samples = match doc.raw("run", "t_samples") {
        None => vec![0.0, 0.5 * t_end, t_end],
        Some((line, text)) => parse_list(*line, "t_samples", text)?,
    };
    let run = RunConfig {
        t_end,
        steps_per_delay,
        convention,
        grid,
        t_samples,
    };
    run.step_spec()?;
    Ok(run)
}

/// Parses and validates a scenario, applying defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let doc = tokenize(text)?;
    let (params, source) = parse_params(&doc)?;
    let ics = parse_ics(&doc)?;
    let run = parse_run(&doc, params.tau)?;
    let tasks = match doc.run_level("tasks")? {
        None => vec![Task::Solve],
        Some((line, text)) => parse_list::<Task>(*line, "tasks", text)?,
    };
    let output_dir = doc.run_level("output_dir")?.map(|(_, s)| PathBuf::from(s));
    let debug = DebugConfig {
        inflate_width: doc.get("debug", "inflate_width")?.unwrap_or(1.0),
        velocity_offset: doc.get("debug", "velocity_offset")?.unwrap_or(0.0),
    };
    if !(debug.inflate_width > 0.0 && debug.velocity_offset.is_finite()) {
        return Err(Error::Config(format!("bad [debug] values {debug:?}")));
    }
    let config = ScenarioConfig {
        params,
        source,
        ics,
        run,
        tasks: normalize_tasks(tasks),
        output_dir,
        debug,
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        parse_config(text).unwrap_err().to_string()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("tasks = solve\n[params]\nalpha = 0\ntau = 0.1\n").unwrap();
        assert_eq!(c.params.alpha, 0.0);
        assert_eq!(c.ics, InitialConditions::default());
        assert_eq!(c.run.steps_per_delay, 64);
        assert_eq!(c.run.convention, ActionConvention::Matched);
        assert!((c.run.t_end - 1.0).abs() < 1e-15);
        assert_eq!(c.tasks, vec![Task::Solve]);
        assert_eq!(c.source, ParamSource::Direct);
    }

    #[test]
    fn params_and_constants_are_exclusive() {
        let text = "[params]\nalpha = 0.5\ntau = 0.1\n[constants]\ne = 1\nm = 1\nc = 1\nL = 1\n";
        assert!(err(text).contains("not both"));
        assert!(err("tasks = solve\n").contains("[params]"));
    }

    #[test]
    fn constants_derive_parameters() {
        let c = parse_config("[constants]\ne = 1\nm = 1\nc = 1\nL = 1\n").unwrap();
        assert_eq!(c.params.alpha, 1.0 / 6.0);
        assert_eq!(c.params.tau, 2.0);
        assert!(matches!(c.source, ParamSource::Constants(_)));
        assert!(parse_config("[constants]\ne = 1\nm = 1\nc = 1\nL = 0.5\n").is_err());
    }

    #[test]
    fn propagator_needs_grid() {
        let e = err("tasks = propagator\n[params]\nalpha = 0\ntau = 0.1\n");
        assert!(e.contains("run.grid"), "{e}");
        let ok = "tasks = propagator\n[params]\nalpha = 0\ntau = 0.1\n[run.grid]\nx_min = -1\nx_max = 1\nn = 21\n";
        assert!(parse_config(ok).is_ok());
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let e = err("[params]\nalpha = 0\ntau = 0.1\nbeta = 2\n");
        assert!(e.contains("`beta`") && e.contains("[params]"), "{e}");
        let e = err("[params]\nalpha = 0\n");
        assert!(e.contains("`tau`") && e.contains("[params]"), "{e}");
        let e = err("[params]\nalpha = 0\ntau = 0.1\n[run.grid]\nx_min = 0\nx_max = 1\n");
        assert!(e.contains("`n`") && e.contains("[run.grid]"), "{e}");
        assert!(err("[nope]\n").contains("[nope]"));
        assert!(err("[params]\nalpha = x\ntau = 1\n").contains("`alpha`"));
    }

    #[test]
    fn full_config_round_trip() {
        let text = "\
# scenario
tasks = solve, verify, fields
action_sign_convention = eq318
output_dir = out ; trailing comment
[params]
alpha = 0.5
tau = 0.1
hbar = 2
[ics]
x_o = 0.3
v_o = 1
prehistory = ramp
kappa_q = 0.5
[run]
t_end = 0.8
steps_per_delay = 32
t_samples = 0.2, 0.4
[run.grid]
x_min = -5
x_max = 5
n = 101
[debug]
inflate_width = 1.01
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.tasks, vec![Task::Solve, Task::Fields, Task::Verify]);
        assert_eq!(c.run.convention, ActionConvention::Reversed);
        assert_eq!(c.output_dir, Some(PathBuf::from("out")));
        assert_eq!(c.params.hbar, 2.0);
        assert_eq!(
            c.ics.prehistory,
            Prehistory::Ramp {
                kappa_q: 0.5,
                kappa_a: 0.0
            }
        );
        assert_eq!(c.run.t_samples, vec![0.2, 0.4]);
        assert_eq!(c.run.grid.unwrap().n_points, 101);
        assert_eq!(c.debug.inflate_width, 1.01);
    }

    #[test]
    fn run_level_keys_only_once() {
        let e = err("tasks = solve\n[params]\nalpha = 0\ntau = 0.1\n[run]\ntasks = verify\n");
        assert!(e.contains("both"), "{e}");
    }

    #[test]
    fn task_overrides_are_rechecked() {
        let c = parse_config("[params]\nalpha = 0\ntau = 0.1\n").unwrap();
        assert!(c.clone().with_tasks(vec![Task::Fields]).is_err());
        let c = c
            .with_tasks(vec![Task::Verify, Task::Solve, Task::Verify])
            .unwrap();
        assert_eq!(c.tasks, vec![Task::Solve, Task::Verify]);
    }

    #[test]
    fn samples_and_conventions_are_checked() {
        assert!(
            err("[params]\nalpha = 0\ntau = 0.1\n[run]\nt_samples = 2\n").contains("t_samples")
        );
        assert!(
            err("action_sign_convention = eq999\n[params]\nalpha = 0\ntau = 0.1\n")
                .contains("eq999")
        );
        assert!(err("[params]\nalpha = 0\ntau = 0.1\n[ics]\nkappa_q = 1\n").contains("ramp"));
        assert!(
            err("tasks = verify\n[params]\nalpha = 0\ntau = 0.1\n[run]\nt_end = 0.1\n")
                .contains("verify")
        );
    }
}
