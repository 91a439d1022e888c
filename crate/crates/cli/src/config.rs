//! Experiment descriptions: a flat `key = value` file split into
//! `[scaffold]`, `[generator]`, `[payoff]` and `[run]` sections. Parsing
//! collects every problem it can find, each tagged with a line number, so
//! one pass over the diagnostics fixes the file.

use std::path::{Path, PathBuf};

use minsup::scaffold::node_count_for;
use minsup::{GeneratorSpec, Mode, Scaffold, SolveError, TerminalCondition};

/// Largest scaffold the runner will build.
const NODE_BUDGET: u128 = 1 << 20;
/// Largest terminal atom count the duality scan accepts.
const DUAL_ATOMS: u128 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Zero,
    Linear,
    Abs,
    Quad,
    Ypos,
    Expneg,
    Ball,
}

#[derive(Debug, Clone)]
pub struct GeneratorChoice {
    pub kind: GeneratorKind,
    pub lambda: f64,
    pub beta: f64,
    pub kappa: f64,
    pub a: Vec<f64>,
    pub b: f64,
}

impl GeneratorChoice {
    pub fn build(&self, dim: usize) -> GeneratorSpec {
        match self.kind {
            GeneratorKind::Zero => GeneratorSpec::zero(dim),
            GeneratorKind::Linear => GeneratorSpec::linear(self.a.clone(), self.b),
            GeneratorKind::Abs => GeneratorSpec::abs(dim, self.lambda),
            GeneratorKind::Quad => GeneratorSpec::quad(dim, self.lambda),
            GeneratorKind::Ypos => GeneratorSpec::pos_part_y(dim, self.beta),
            GeneratorKind::Expneg => GeneratorSpec::exp_neg_y(dim),
            GeneratorKind::Ball => GeneratorSpec::ball(dim, self.kappa),
        }
    }

    /// Same family at a different scale; only meaningful for the scalable
    /// kinds (`abs`, `quad`).
    pub fn build_scaled(&self, dim: usize, lambda: f64) -> GeneratorSpec {
        match self.kind {
            GeneratorKind::Abs => GeneratorSpec::abs(dim, lambda),
            GeneratorKind::Quad => GeneratorSpec::quad(dim, lambda),
            _ => unreachable!("validated scalable kind"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    Call,
    Put,
    Digital,
    Identity,
    Square,
    Poly,
}

#[derive(Debug, Clone)]
pub struct PayoffChoice {
    pub kind: PayoffKind,
    pub strike: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
}

impl PayoffChoice {
    /// Payoff as a function of the terminal state sum.
    pub fn eval(&self, x: f64) -> f64 {
        let raw = match self.kind {
            PayoffKind::Call => (x - self.strike).max(0.0),
            PayoffKind::Put => (self.strike - x).max(0.0),
            PayoffKind::Digital => {
                if x >= self.strike {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffKind::Identity => x,
            PayoffKind::Square => x * x,
            PayoffKind::Poly => {
                self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
        };
        self.scale * raw
    }

    pub fn terminal(&self, s: &Scaffold) -> Result<TerminalCondition, SolveError> {
        TerminalCondition::from_state_sum(s, |x| self.eval(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunCommand {
    Solve,
    Verify,
    Properties,
    Duality,
    Converge,
    Stability,
}

impl RunCommand {
    pub fn name(self) -> &'static str {
        match self {
            RunCommand::Solve => "solve",
            RunCommand::Verify => "verify",
            RunCommand::Properties => "properties",
            RunCommand::Duality => "duality",
            RunCommand::Converge => "converge",
            RunCommand::Stability => "stability",
        }
    }
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dim: usize,
    pub steps: usize,
    pub horizon: f64,
    pub mode: Mode,
    pub generator: GeneratorChoice,
    /// Absent only for `properties`, which draws its own payoffs.
    pub payoff: Option<PayoffChoice>,
    pub command: RunCommand,
    pub seed: u64,
    pub cases: usize,
    pub out: PathBuf,
    pub steps_list: Vec<usize>,
    pub levels: usize,
    pub tolerance: f64,
}

/// One `key = value` occurrence.
struct Entry {
    line: usize,
    key: String,
    value: String,
    used: bool,
}

struct Section {
    name: &'static str,
    entries: Vec<Entry>,
}

struct Raw {
    sections: Vec<Section>,
    diags: Vec<String>,
}

const SECTION_NAMES: [&str; 4] = ["scaffold", "generator", "payoff", "run"];

fn parse_raw(text: &str) -> Raw {
    let mut sections: Vec<Section> =
        SECTION_NAMES.iter().map(|&name| Section { name, entries: Vec::new() }).collect();
    let mut diags = Vec::new();
    let mut current: Option<usize> = None;

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            match SECTION_NAMES.iter().position(|&s| s == name) {
                Some(idx) => current = Some(idx),
                None => {
                    diags.push(format!("line {line}: unknown section [{name}]"));
                    current = None;
                }
            }
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            diags.push(format!("line {line}: expected 'key = value' or '[section]'"));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            diags.push(format!("line {line}: empty key"));
            continue;
        }
        let Some(idx) = current else {
            diags.push(format!("line {line}: '{key}' appears before any [section]"));
            continue;
        };
        let section = &mut sections[idx];
        if let Some(prev) = section.entries.iter().find(|e| e.key == key) {
            diags.push(format!(
                "line {line}: duplicate key '{key}' in [{}] (first set on line {})",
                section.name, prev.line
            ));
            continue;
        }
        section.entries.push(Entry { line, key, value, used: false });
    }

    Raw { sections, diags }
}

impl Raw {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let sec = self.sections.iter_mut().find(|s| s.name == section)?;
        let entry = sec.entries.iter_mut().find(|e| e.key == key)?;
        entry.used = true;
        Some((entry.line, entry.value.clone()))
    }

    /// Every key a command does not consume is a mistake worth flagging.
    fn flag_unused(&mut self) {
        for sec in &self.sections {
            for e in &sec.entries {
                if !e.used {
                    self.diags
                        .push(format!("line {}: unknown key '{}' in [{}]", e.line, e.key, sec.name));
                }
            }
        }
    }
}

fn parse_with<T, E: std::fmt::Display>(
    diags: &mut Vec<String>,
    at: Option<(usize, String)>,
    what: &str,
    parse: impl Fn(&str) -> Result<T, E>,
) -> Option<T> {
    let (line, value) = at?;
    match parse(&value) {
        Ok(v) => Some(v),
        Err(e) => {
            diags.push(format!("line {line}: {what} '{value}': {e}"));
            None
        }
    }
}

fn parse_f64_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|p| {
            let p = p.trim();
            match p.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                Ok(_) => Err(format!("'{p}': must be finite")),
                Err(e) => Err(format!("'{p}': {e}")),
            }
        })
        .collect()
}

fn parse_positive_usize(v: &str) -> Result<usize, String> {
    let n: usize = v.parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
    if n >= 1 {
        Ok(n)
    } else {
        Err("must be at least 1".into())
    }
}

fn parse_positive_f64(v: &str) -> Result<f64, String> {
    let t: f64 = v.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err("must be positive and finite".into())
    }
}

fn parse_nonneg_f64(v: &str) -> Result<f64, String> {
    let t: f64 = v.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if t >= 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err("must be nonnegative and finite".into())
    }
}

fn parse_finite_f64(v: &str) -> Result<f64, String> {
    let t: f64 = v.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if t.is_finite() {
        Ok(t)
    } else {
        Err("must be finite".into())
    }
}

fn parse_usize_list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{}': {e}", p.trim())))
        .collect()
}

fn require(
    raw: &mut Raw,
    diags: &mut Vec<String>,
    section: &str,
    key: &str,
) -> Option<(usize, String)> {
    let got = raw.take(section, key);
    if got.is_none() {
        diags.push(format!("config: missing '{key}' in [{section}]"));
    }
    got
}

/// Read and validate a config file. Every problem found is reported, each
/// on its own line.
pub fn load(path: &Path) -> Result<Experiment, Vec<String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return Err(vec![format!("config: cannot read {}: {e}", path.display())]),
    };
    from_str(&text)
}

pub fn from_str(text: &str) -> Result<Experiment, Vec<String>> {
    let mut raw = parse_raw(text);
    let mut diags = Vec::new();

    // [run] first: the command decides which sections are required.
    let at = require(&mut raw, &mut diags, "run", "command");
    let command = parse_with(&mut diags, at, "command", |v| {
        match v {
            "solve" => Ok(RunCommand::Solve),
            "verify" => Ok(RunCommand::Verify),
            "properties" => Ok(RunCommand::Properties),
            "duality" => Ok(RunCommand::Duality),
            "converge" => Ok(RunCommand::Converge),
            "stability" => Ok(RunCommand::Stability),
            _ => Err("expected solve|verify|properties|duality|converge|stability"),
        }
    });

    let seed = parse_with(&mut diags, raw.take("run", "seed"), "seed", str::parse::<u64>)
        .unwrap_or(0);
    let cases = parse_with(&mut diags, raw.take("run", "cases"), "cases", str::parse::<usize>)
        .unwrap_or(100);
    let out = raw
        .take("run", "out")
        .map(|(_, v)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from("."));
    let tolerance =
        parse_with(&mut diags, raw.take("run", "tolerance"), "tolerance", parse_positive_f64)
            .unwrap_or(1e-6);

    let steps_list = if command == Some(RunCommand::Converge) {
        let at = require(&mut raw, &mut diags, "run", "steps_list");
        parse_with(&mut diags, at, "steps_list", parse_usize_list).unwrap_or_default()
    } else {
        raw.take("run", "steps_list");
        Vec::new()
    };
    let levels = if command == Some(RunCommand::Stability) {
        parse_with(&mut diags, raw.take("run", "levels"), "levels", str::parse::<usize>)
            .unwrap_or(5)
    } else {
        raw.take("run", "levels");
        5
    };

    // [scaffold].
    let at = require(&mut raw, &mut diags, "scaffold", "dim");
    let dim = parse_with(&mut diags, at, "dim", parse_positive_usize);
    let at = require(&mut raw, &mut diags, "scaffold", "steps");
    let steps = parse_with(&mut diags, at, "steps", parse_positive_usize);
    let at = require(&mut raw, &mut diags, "scaffold", "horizon");
    let horizon = parse_with(&mut diags, at, "horizon", parse_positive_f64);
    let at = require(&mut raw, &mut diags, "scaffold", "mode");
    let mode = parse_with(&mut diags, at, "mode", |v| match v {
        "recombining" => Ok(Mode::Recombining),
        "nonrecombining" => Ok(Mode::NonRecombining),
        _ => Err("expected recombining|nonrecombining"),
    });

    // [generator].
    let at = require(&mut raw, &mut diags, "generator", "kind");
    let kind = parse_with(
        &mut diags,
        at,
        "generator kind",
        |v| match v {
            "zero" => Ok(GeneratorKind::Zero),
            "linear" => Ok(GeneratorKind::Linear),
            "abs" => Ok(GeneratorKind::Abs),
            "quad" => Ok(GeneratorKind::Quad),
            "ypos" => Ok(GeneratorKind::Ypos),
            "expneg" => Ok(GeneratorKind::Expneg),
            "ball" => Ok(GeneratorKind::Ball),
            _ => Err("expected zero|linear|abs|quad|ypos|expneg|ball"),
        },
    );

    let lambda = parse_with(&mut diags, raw.take("generator", "lambda"), "lambda", parse_nonneg_f64);
    let beta = parse_with(&mut diags, raw.take("generator", "beta"), "beta", parse_nonneg_f64);
    let kappa = parse_with(&mut diags, raw.take("generator", "kappa"), "kappa", parse_nonneg_f64);
    let a = parse_with(&mut diags, raw.take("generator", "a"), "a", parse_f64_list);
    let b = parse_with(&mut diags, raw.take("generator", "b"), "b", parse_finite_f64);

    let mut need = |name: &str, present: bool| {
        if !present {
            diags.push(format!("config: generator kind needs '{name}' in [generator]"));
        }
    };
    match kind {
        Some(GeneratorKind::Abs) | Some(GeneratorKind::Quad) => need("lambda", lambda.is_some()),
        Some(GeneratorKind::Ypos) => need("beta", beta.is_some()),
        Some(GeneratorKind::Ball) => need("kappa", kappa.is_some()),
        Some(GeneratorKind::Linear) => {
            need("a", a.is_some());
            need("b", b.is_some());
        }
        _ => {}
    }

    // [payoff]; the properties command draws its own payoffs and takes none.
    let payoff = if command == Some(RunCommand::Properties) {
        for key in ["kind", "strike", "scale", "coeffs"] {
            raw.take("payoff", key);
        }
        None
    } else {
        let at = require(&mut raw, &mut diags, "payoff", "kind");
        let pkind = parse_with(
            &mut diags,
            at,
            "payoff kind",
            |v| match v {
                "call" => Ok(PayoffKind::Call),
                "put" => Ok(PayoffKind::Put),
                "digital" => Ok(PayoffKind::Digital),
                "identity" => Ok(PayoffKind::Identity),
                "square" => Ok(PayoffKind::Square),
                "poly" => Ok(PayoffKind::Poly),
                _ => Err("expected call|put|digital|identity|square|poly"),
            },
        );
        let strike = parse_with(&mut diags, raw.take("payoff", "strike"), "strike", parse_finite_f64)
            .unwrap_or(0.0);
        let scale = parse_with(&mut diags, raw.take("payoff", "scale"), "scale", parse_finite_f64)
            .unwrap_or(1.0);
        let coeffs = parse_with(&mut diags, raw.take("payoff", "coeffs"), "coeffs", parse_f64_list);
        if pkind == Some(PayoffKind::Poly) && coeffs.as_ref().map_or(true, Vec::is_empty) {
            diags.push("config: payoff kind 'poly' needs nonempty 'coeffs'".into());
        }
        pkind.map(|kind| PayoffChoice {
            kind,
            strike,
            scale,
            coeffs: coeffs.unwrap_or_default(),
        })
    };

    raw.flag_unused();
    diags.splice(0..0, std::mem::take(&mut raw.diags));

    // Cross-field checks need the typed values; skip them when the basics
    // already failed.
    if let (Some(dim), Some(steps), Some(horizon), Some(mode), Some(kind), Some(command)) =
        (dim, steps, horizon, mode, kind, command)
    {
        if dim >= 1 && steps >= 1 && horizon > 0.0 {
            semantic_checks(
                &mut diags,
                dim,
                steps,
                horizon,
                mode,
                kind,
                a.as_deref(),
                beta,
                command,
                &steps_list,
                levels,
            );
        }
    }

    if !diags.is_empty() {
        return Err(diags);
    }

    Ok(Experiment {
        dim: dim.unwrap(),
        steps: steps.unwrap(),
        horizon: horizon.unwrap(),
        mode: mode.unwrap(),
        generator: GeneratorChoice {
            kind: kind.unwrap(),
            lambda: lambda.unwrap_or(0.0),
            beta: beta.unwrap_or(0.0),
            kappa: kappa.unwrap_or(0.0),
            a: a.unwrap_or_default(),
            b: b.unwrap_or(0.0),
        },
        payoff,
        command: command.unwrap(),
        seed,
        cases,
        out,
        steps_list,
        levels,
        tolerance,
    })
}

#[allow(clippy::too_many_arguments)]
fn semantic_checks(
    diags: &mut Vec<String>,
    dim: usize,
    steps: usize,
    horizon: f64,
    mode: Mode,
    kind: GeneratorKind,
    a: Option<&[f64]>,
    beta: Option<f64>,
    command: RunCommand,
    steps_list: &[usize],
    levels: usize,
) {
    let budget_ok = |n: usize| node_count_for(dim, n, mode) <= NODE_BUDGET;
    if !budget_ok(steps) {
        diags.push(format!(
            "config: scaffold dim {dim} steps {steps} exceeds the {NODE_BUDGET} node budget"
        ));
    }

    let dt = horizon / steps as f64;
    if kind == GeneratorKind::Linear {
        if let Some(a) = a {
            if a.len() != dim {
                diags.push(format!(
                    "config: generator 'a' needs {dim} entries, got {}",
                    a.len()
                ));
            } else {
                let tilt: f64 = a.iter().map(|v| v.abs()).sum::<f64>() * dt.sqrt();
                if tilt >= 1.0 {
                    diags.push(format!(
                        "config: kernel too steep: sum |a_i| sqrt(dt) = {tilt:.3} must stay below 1"
                    ));
                }
            }
        }
    }
    if kind == GeneratorKind::Ypos {
        if let Some(beta) = beta {
            if beta * dt >= 1.0 {
                diags.push(format!(
                    "config: beta dt = {:.3} must stay below 1 for the fixed point",
                    beta * dt
                ));
            }
        }
    }

    match command {
        RunCommand::Duality => {
            let atoms: u128 = match mode {
                Mode::NonRecombining => (1u128 << dim).pow(steps as u32),
                Mode::Recombining => (steps as u128 + 1).pow(dim as u32),
            };
            if atoms > DUAL_ATOMS {
                diags.push(format!(
                    "config: duality needs at most {DUAL_ATOMS} terminal atoms, got {atoms}"
                ));
            }
            if !matches!(
                kind,
                GeneratorKind::Zero
                    | GeneratorKind::Linear
                    | GeneratorKind::Abs
                    | GeneratorKind::Quad
                    | GeneratorKind::Ball
            ) {
                diags.push("config: duality needs a y-independent generator kind".into());
            }
        }
        RunCommand::Converge => {
            if steps_list.is_empty() {
                diags.push("config: converge needs a nonempty ascending steps_list".into());
            }
            if steps_list.windows(2).any(|w| w[0] >= w[1]) {
                diags.push("config: steps_list must be strictly ascending".into());
            }
            for &n in steps_list {
                if n == 0 {
                    diags.push("config: steps_list entries must be at least 1".into());
                } else if !budget_ok(n) {
                    diags.push(format!(
                        "config: steps_list entry {n} exceeds the {NODE_BUDGET} node budget"
                    ));
                }
            }
        }
        RunCommand::Stability => {
            if !matches!(kind, GeneratorKind::Abs | GeneratorKind::Quad) {
                diags.push(
                    "config: stability needs a scalable generator kind (abs or quad)".into(),
                );
            }
            if levels == 0 {
                diags.push("config: stability needs at least one level".into());
            }
        }
        _ => {}
    }
}
