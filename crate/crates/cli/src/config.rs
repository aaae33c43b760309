//! `key = value` experiment configs with `[section]` headers.
//!
//! Lists are comma separated, wedges are written `a:b`, and each `case` line
//! under `[cases]` is `family; t; xs; rs`. Repeated `case` keys accumulate;
//! every other key may appear once. Formatting writes every field, so
//! `parse(format(c)) == c`.

use std::fmt::{self, Write as _};

use kpzkp::kernels::{Family, Wedge};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    TwTable,
    DetEval,
    KpResidual,
    HirotaResidual,
    MatrixKp,
    CylKdv,
    TailFit,
    ScatteringLimit,
    PathIntegralCheck,
    BracketCheck,
    SolveKp,
}

pub const COMMANDS: [Command; 11] = [
    Command::TwTable,
    Command::DetEval,
    Command::KpResidual,
    Command::HirotaResidual,
    Command::MatrixKp,
    Command::CylKdv,
    Command::TailFit,
    Command::ScatteringLimit,
    Command::PathIntegralCheck,
    Command::BracketCheck,
    Command::SolveKp,
];

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TwTable => "tw-table",
            Command::DetEval => "det-eval",
            Command::KpResidual => "kp-residual",
            Command::HirotaResidual => "hirota-residual",
            Command::MatrixKp => "matrix-kp",
            Command::CylKdv => "cyl-kdv",
            Command::TailFit => "tail-fit",
            Command::ScatteringLimit => "scattering-limit",
            Command::PathIntegralCheck => "path-integral-check",
            Command::BracketCheck => "bracket-check",
            Command::SolveKp => "solve-kp",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        COMMANDS.iter().copied().find(|c| c.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// One entry of a multi-configuration check.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub family: Family,
    pub t: f64,
    pub xs: Vec<f64>,
    pub rs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    pub out_dir: String,
    // [kernel]
    pub family: Family,
    pub t: f64,
    pub xs: Vec<f64>,
    pub rs: Vec<f64>,
    pub wedges: Vec<Wedge>,
    pub spikes: Vec<f64>,
    pub eta_anchor: f64,
    pub eta_anchor_alt: f64,
    // [grid]
    pub center: [f64; 3],
    pub steps: [f64; 3],
    pub dims: [usize; 3],
    // [sweep]
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
    pub times: Vec<f64>,
    // [quadrature]
    pub quad_n: usize,
    pub samples: usize,
    // [check]
    pub tolerance: f64,
    pub aux_tolerance: f64,
    pub halving: bool,
    pub kp_stencil: bool,
    pub kp_tolerance: f64,
    pub x_alt: f64,
    // [scattering]
    pub decay_wedge: Wedge,
    pub decay_point: [f64; 2],
    pub decay_times: Vec<f64>,
    // [solver]
    pub soliton_c: f64,
    pub soliton_period: f64,
    pub soliton_points: usize,
    pub soliton_time: f64,
    pub dt: f64,
    pub window_r: [f64; 2],
    pub window_x: [f64; 2],
    pub points_r: usize,
    pub points_x: usize,
    pub t1: f64,
    // [cases]
    pub cases: Vec<Case>,
}

const ORIGIN: Wedge = Wedge { a: 0.0, b: 0.0 };

impl ExperimentConfig {
    /// Defaults for `command`; they reproduce the corresponding acceptance check.
    pub fn defaults_for(command: Command) -> Self {
        let mut c = ExperimentConfig {
            command,
            seed: 0,
            out_dir: "out".into(),
            family: Family::NwFixedPoint,
            t: 1.0,
            xs: vec![0.0],
            rs: vec![0.0],
            wedges: vec![ORIGIN],
            spikes: vec![],
            eta_anchor: 0.45,
            eta_anchor_alt: 0.6,
            center: [1.0, 0.2, 0.5],
            steps: [0.02; 3],
            dims: [3, 3, 7],
            r_min: -6.0,
            r_max: 4.0,
            r_step: 0.1,
            times: vec![],
            quad_n: 48,
            samples: 0,
            tolerance: 1e-6,
            aux_tolerance: 1e-4,
            halving: false,
            kp_stencil: false,
            kp_tolerance: 1e-2,
            x_alt: 0.5,
            decay_wedge: Wedge { a: 2.0, b: 0.0 },
            decay_point: [0.0, 0.0],
            decay_times: vec![0.2, 0.1, 0.05],
            soliton_c: 0.5,
            soliton_period: 40.0,
            soliton_points: 512,
            soliton_time: 2.0,
            dt: 0.005,
            window_r: [-8.0, 6.0],
            window_x: [-3.0, 3.0],
            points_r: 512,
            points_x: 64,
            t1: 1.1,
            cases: vec![],
        };
        match command {
            Command::TwTable => c.tolerance = 0.0,
            Command::DetEval => {
                c.xs = vec![0.0, 0.5];
                c.rs = vec![-2.0, 0.0, 2.0];
            }
            Command::KpResidual => {
                c.tolerance = 5e-3;
                c.cases = vec![
                    Case { family: Family::NwFixedPoint, t: 1.0, xs: vec![0.2], rs: vec![0.5] },
                    Case { family: Family::KpzNarrowWedge, t: 1.0, xs: vec![0.1], rs: vec![1.0] },
                ];
            }
            Command::HirotaResidual => {
                c.tolerance = 1e-3;
                c.dims = [5, 5, 7];
                c.halving = true;
            }
            Command::MatrixKp => {
                c.family = Family::MultiwedgeExtended;
                c.xs = vec![-0.3, 0.4];
                c.rs = vec![0.5, 0.8];
                c.center = [1.0, 0.0, 0.0];
                c.dims = [3, 5, 5];
                c.tolerance = 1e-2;
            }
            Command::CylKdv => {
                c.family = Family::KpzNarrowWedge;
                c.center = [1.0, 0.0, 1.0];
                c.steps = [0.02, 1.0, 0.02];
                c.dims = [3, 1, 7];
                c.tolerance = 5e-3;
            }
            Command::TailFit => {
                c.r_min = -7.0;
                c.r_max = -5.0;
                c.r_step = 0.05;
                c.tolerance = 0.15;
            }
            Command::ScatteringLimit => {
                c.xs = vec![-1.0, 1.0];
                c.rs = vec![0.5, 0.3];
                c.times = vec![0.1, 0.05, 0.02, 0.01];
                c.quad_n = 64;
                c.tolerance = 5e-3;
                c.aux_tolerance = 1e-8;
                c.samples = 100_000;
            }
            Command::PathIntegralCheck => {
                c.quad_n = 64;
                c.cases = vec![
                    Case { family: Family::MultiwedgeExtended, t: 1.0, xs: vec![-0.4, 0.5], rs: vec![0.3, 0.8] },
                    Case { family: Family::MultiwedgeExtended, t: 0.7, xs: vec![-1.0, 0.2], rs: vec![-0.5, 0.5] },
                    Case { family: Family::MultiwedgeExtended, t: 1.5, xs: vec![0.0, 1.0], rs: vec![1.0, 0.2] },
                ];
            }
            Command::BracketCheck => {
                c.quad_n = 96;
                c.tolerance = 1e-7;
            }
            Command::SolveKp => {
                c.tolerance = 5e-3;
                c.aux_tolerance = 1e-6;
            }
        }
        c
    }

    /// Parse `text`, starting from the defaults of `command`.
    pub fn parse(text: &str, command: Command) -> Result<Self, ConfigError> {
        let mut c = Self::defaults_for(command);
        let mut section = String::new();
        let mut seen: Vec<(String, String)> = Vec::new();
        let mut cases_given = false;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let err = |message: String| ConfigError { line, message };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(format!("unterminated section header `{body}`")))?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section `[{name}]`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "case" {
                let id = (section.clone(), key.to_string());
                if seen.contains(&id) {
                    return Err(err(format!("duplicate key `{key}`")));
                }
                seen.push(id);
            }
            c.set(&section, key, value, &mut cases_given).map_err(err)?;
        }
        if c.command != command {
            return Err(ConfigError {
                line: 0,
                message: format!("config is for `{}` but `{}` was requested", c.command.name(), command.name()),
            });
        }
        Ok(c)
    }

    fn set(&mut self, section: &str, key: &str, v: &str, cases_given: &mut bool) -> Result<(), String> {
        match (section, key) {
            ("", "command") => {
                self.command = Command::parse(v).ok_or_else(|| format!("unknown command `{v}`"))?;
            }
            ("", "seed") => self.seed = int(v)? as u64,
            ("output", "dir") => {
                if v.is_empty() {
                    return Err("output dir must not be empty".into());
                }
                self.out_dir = v.to_string();
            }
            ("kernel", "family") => self.family = family(v)?,
            ("kernel", "t") => self.t = num(v)?,
            ("kernel", "xs") => self.xs = list(v)?,
            ("kernel", "rs") => self.rs = list(v)?,
            ("kernel", "wedges") => self.wedges = wedges(v)?,
            ("kernel", "spikes") => self.spikes = list(v)?,
            ("kernel", "eta_anchor") => self.eta_anchor = num(v)?,
            ("kernel", "eta_anchor_alt") => self.eta_anchor_alt = num(v)?,
            ("grid", "center") => self.center = triple(v)?,
            ("grid", "steps") => self.steps = triple(v)?,
            ("grid", "dims") => {
                let d = list(v)?;
                if d.len() != 3 || d.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
                    return Err(format!("dims must be three positive integers, got `{v}`"));
                }
                self.dims = [d[0] as usize, d[1] as usize, d[2] as usize];
            }
            ("sweep", "r_min") => self.r_min = num(v)?,
            ("sweep", "r_max") => self.r_max = num(v)?,
            ("sweep", "r_step") => self.r_step = num(v)?,
            ("sweep", "times") => self.times = list(v)?,
            ("quadrature", "n") => self.quad_n = int(v)?,
            ("quadrature", "samples") => self.samples = int(v)?,
            ("check", "tolerance") => self.tolerance = num(v)?,
            ("check", "aux_tolerance") => self.aux_tolerance = num(v)?,
            ("check", "halving") => self.halving = boolean(v)?,
            ("check", "kp_stencil") => self.kp_stencil = boolean(v)?,
            ("check", "kp_tolerance") => self.kp_tolerance = num(v)?,
            ("check", "x_alt") => self.x_alt = num(v)?,
            ("scattering", "decay_wedge") => {
                let w = wedges(v)?;
                if w.len() != 1 {
                    return Err("decay_wedge takes exactly one wedge".into());
                }
                self.decay_wedge = w[0];
            }
            ("scattering", "decay_point") => {
                let p = list(v)?;
                if p.len() != 2 {
                    return Err("decay_point takes two numbers".into());
                }
                self.decay_point = [p[0], p[1]];
            }
            ("scattering", "decay_times") => self.decay_times = list(v)?,
            ("solver", "soliton_c") => self.soliton_c = num(v)?,
            ("solver", "soliton_period") => self.soliton_period = num(v)?,
            ("solver", "soliton_points") => self.soliton_points = int(v)?,
            ("solver", "soliton_time") => self.soliton_time = num(v)?,
            ("solver", "dt") => self.dt = num(v)?,
            ("solver", "window_r") => self.window_r = pair(v)?,
            ("solver", "window_x") => self.window_x = pair(v)?,
            ("solver", "points_r") => self.points_r = int(v)?,
            ("solver", "points_x") => self.points_x = int(v)?,
            ("solver", "t1") => self.t1 = num(v)?,
            ("cases", "case") => {
                if !*cases_given {
                    self.cases.clear();
                    *cases_given = true;
                }
                self.cases.push(case(v)?);
            }
            ("", _) => return Err(format!("unknown top-level key `{key}`")),
            _ => return Err(format!("unknown key `{key}` in [{section}]")),
        }
        Ok(())
    }

    pub fn format(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "command = {}", self.command.name());
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "\n[output]\ndir = {}", self.out_dir);
        let _ = writeln!(w, "\n[kernel]\nfamily = {}", self.family.name());
        let _ = writeln!(w, "t = {}", self.t);
        let _ = writeln!(w, "xs = {}", join(&self.xs));
        let _ = writeln!(w, "rs = {}", join(&self.rs));
        let ws: Vec<String> = self.wedges.iter().map(|x| format!("{}:{}", x.a, x.b)).collect();
        let _ = writeln!(w, "wedges = {}", ws.join(", "));
        let _ = writeln!(w, "spikes = {}", join(&self.spikes));
        let _ = writeln!(w, "eta_anchor = {}", self.eta_anchor);
        let _ = writeln!(w, "eta_anchor_alt = {}", self.eta_anchor_alt);
        let _ = writeln!(w, "\n[grid]\ncenter = {}", join(&self.center));
        let _ = writeln!(w, "steps = {}", join(&self.steps));
        let _ = writeln!(w, "dims = {}, {}, {}", self.dims[0], self.dims[1], self.dims[2]);
        let _ = writeln!(w, "\n[sweep]\nr_min = {}\nr_max = {}\nr_step = {}", self.r_min, self.r_max, self.r_step);
        let _ = writeln!(w, "times = {}", join(&self.times));
        let _ = writeln!(w, "\n[quadrature]\nn = {}\nsamples = {}", self.quad_n, self.samples);
        let _ = writeln!(w, "\n[check]\ntolerance = {}\naux_tolerance = {}", self.tolerance, self.aux_tolerance);
        let _ = writeln!(w, "halving = {}\nkp_stencil = {}", self.halving, self.kp_stencil);
        let _ = writeln!(w, "kp_tolerance = {}\nx_alt = {}", self.kp_tolerance, self.x_alt);
        let _ = writeln!(w, "\n[scattering]\ndecay_wedge = {}:{}", self.decay_wedge.a, self.decay_wedge.b);
        let _ = writeln!(w, "decay_point = {}", join(&self.decay_point));
        let _ = writeln!(w, "decay_times = {}", join(&self.decay_times));
        let _ = writeln!(w, "\n[solver]\nsoliton_c = {}\nsoliton_period = {}", self.soliton_c, self.soliton_period);
        let _ = writeln!(w, "soliton_points = {}\nsoliton_time = {}\ndt = {}", self.soliton_points, self.soliton_time, self.dt);
        let _ = writeln!(w, "window_r = {}\nwindow_x = {}", join(&self.window_r), join(&self.window_x));
        let _ = writeln!(w, "points_r = {}\npoints_x = {}\nt1 = {}", self.points_r, self.points_x, self.t1);
        let _ = writeln!(w, "\n[cases]");
        for c in &self.cases {
            let _ = writeln!(w, "case = {}; {}; {}; {}", c.family.name(), c.t, join(&c.xs), join(&c.rs));
        }
        s
    }
}

const SECTIONS: [&str; 9] = ["output", "kernel", "grid", "sweep", "quadrature", "check", "scattering", "solver", "cases"];

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn num(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got `{v}`"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got `{v}`"))
    }
}

fn int(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got `{v}`"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list(v: &str) -> Result<Vec<f64>, String> {
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|p| num(p.trim())).collect()
}

fn pair(v: &str) -> Result<[f64; 2], String> {
    match list(v)?.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("expected two numbers, got `{v}`")),
    }
}

fn triple(v: &str) -> Result<[f64; 3], String> {
    match list(v)?.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected three numbers, got `{v}`")),
    }
}

fn family(v: &str) -> Result<Family, String> {
    Family::parse(v).ok_or_else(|| format!("unknown kernel family `{v}`"))
}

fn wedges(v: &str) -> Result<Vec<Wedge>, String> {
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|p| {
            let (a, b) = p.trim().split_once(':').ok_or_else(|| format!("wedge must be `a:b`, got `{}`", p.trim()))?;
            Ok(Wedge { a: num(a.trim())?, b: num(b.trim())? })
        })
        .collect()
}

fn case(v: &str) -> Result<Case, String> {
    let parts: Vec<&str> = v.split(';').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("case must be `family; t; xs; rs`, got `{v}`"));
    }
    Ok(Case { family: family(parts[0])?, t: num(parts[1])?, xs: list(parts[2])?, rs: list(parts[3])? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        for cmd in COMMANDS {
            let c = ExperimentConfig::defaults_for(cmd);
            assert_eq!(ExperimentConfig::parse(&c.format(), cmd).unwrap(), c, "{}", cmd.name());
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("seed = 3\n\n[kernel]\nt = abc\n", Command::DetEval).unwrap_err();
        assert_eq!(e.line, 4);
        let e = ExperimentConfig::parse("[kernel]\nbogus = 1\n", Command::DetEval).unwrap_err();
        assert_eq!(e.line, 2);
        let e = ExperimentConfig::parse("[nowhere]\n", Command::DetEval).unwrap_err();
        assert_eq!(e.line, 1);
        let e = ExperimentConfig::parse("seed = 1\nseed = 2\n", Command::DetEval).unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn command_mismatch_is_rejected() {
        assert!(ExperimentConfig::parse("command = tw-table\n", Command::DetEval).is_err());
        assert!(ExperimentConfig::parse("command = det-eval # same\n", Command::DetEval).is_ok());
    }

    #[test]
    fn cases_replace_the_defaults() {
        let c = ExperimentConfig::parse("[cases]\ncase = flat_fixed_point; 2; 0; -1\n", Command::KpResidual).unwrap();
        assert_eq!(c.cases, vec![Case { family: Family::FlatFixedPoint, t: 2.0, xs: vec![0.0], rs: vec![-1.0] }]);
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(
            seed in any::<u64>(),
            t in -1e3f64..1e3,
            xs in proptest::collection::vec(-1e6f64..1e6, 0..5),
            tol in 0f64..1.0,
            n in 1usize..10_000,
            halving in any::<bool>(),
        ) {
            let mut c = ExperimentConfig::defaults_for(Command::ScatteringLimit);
            c.seed = seed;
            c.t = t;
            c.xs = xs.clone();
            c.tolerance = tol;
            c.quad_n = n;
            c.halving = halving;
            c.cases.push(Case { family: Family::KpzSpiked, t, xs: xs.clone(), rs: xs });
            prop_assert_eq!(ExperimentConfig::parse(&c.format(), Command::ScatteringLimit).unwrap(), c);
        }
    }
}
