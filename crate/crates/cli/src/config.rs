//! Flat key = value run configuration. Round-trips losslessly through
//! text; unknown keys and malformed values are parse errors carrying
//! line/column positions.

use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Kinematics,
    Lemmas,
    Boardgame,
    Be,
    Hierarchy,
    Decay,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Kinematics => "kinematics",
            Scenario::Lemmas => "lemmas",
            Scenario::Boardgame => "boardgame",
            Scenario::Be => "be",
            Scenario::Hierarchy => "hierarchy",
            Scenario::Decay => "decay",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        match s {
            "kinematics" => Some(Scenario::Kinematics),
            "lemmas" => Some(Scenario::Lemmas),
            "boardgame" => Some(Scenario::Boardgame),
            "be" => Some(Scenario::Be),
            "hierarchy" => Some(Scenario::Hierarchy),
            "decay" => Some(Scenario::Decay),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsCfg {
    pub dims: Vec<usize>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmasCfg {
    pub lemma: String,
    pub d: usize,
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    pub trials: usize,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardgameCfg {
    pub action: String,
    pub k: usize,
    pub n: usize,
    pub mu: Vec<usize>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeCfg {
    pub d: usize,
    pub gamma: f64,
    pub b: String,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub t: f64,
    pub depth: usize,
    pub outer_paths: usize,
    pub f0: String,
    pub conservation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyCfg {
    pub d: usize,
    pub gamma: f64,
    pub b: String,
    pub p: f64,
    pub q: f64,
    /// 0 selects the regime-derived value.
    pub alpha: f64,
    pub beta: f64,
    /// 0 selects the regime-derived value.
    pub mu: f64,
    pub t: f64,
    pub depth: usize,
    pub outer_paths: usize,
    pub atoms: String,
    pub uq_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCfg {
    pub k: usize,
    pub n_max: usize,
    /// e^mu / C.
    pub ratio: f64,
    pub c: f64,
    pub norm_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub kinematics: KinematicsCfg,
    pub lemmas: LemmasCfg,
    pub boardgame: BoardgameCfg,
    pub be: BeCfg,
    pub hierarchy: HierarchyCfg,
    pub decay: DecayCfg,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::Lemmas,
            seed: 42,
            out_dir: PathBuf::from("out"),
            kinematics: KinematicsCfg {
                dims: vec![3, 4],
                samples: 1_000_000,
            },
            lemmas: LemmasCfg {
                lemma: "all".into(),
                d: 3,
                gamma: 1.0,
                p: 2.0,
                q: 5.0,
                trials: 1000,
                mc_samples: 60_000,
            },
            boardgame: BoardgameCfg {
                action: "classes".into(),
                k: 2,
                n: 4,
                mu: vec![],
                samples: 20_000,
            },
            be: BeCfg {
                d: 3,
                gamma: 1.0,
                b: "const:0.5".into(),
                p: 3.5,
                q: 5.5,
                alpha: 1.0,
                beta: 1.0,
                mu: 0.0,
                t: 1.0,
                depth: 4,
                outer_paths: 64,
                // the profile shape is not collision-invariant, so the
                // iteration has something to do
                f0: "polyweight:2e-4".into(),
                conservation: false,
            },
            hierarchy: HierarchyCfg {
                d: 3,
                gamma: 1.0,
                b: "const:0.5".into(),
                p: 4.0,
                q: 5.0,
                alpha: 0.0,
                beta: 1.0,
                mu: 0.0,
                t: 1.0,
                depth: 3,
                outer_paths: 48,
                atoms: "1.0:polyweight:1.0".into(),
                uq_samples: 8000,
            },
            decay: DecayCfg {
                k: 5,
                n_max: 60,
                ratio: 6.0,
                c: 80.0,
                norm_f: 1.0,
            },
        }
    }
}

#[derive(Debug)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, col {}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        col,
        message: message.into(),
    }
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let k = &self.kinematics;
        let dims: Vec<String> = k.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "kinematics.dims = {}", dims.join(","));
        let _ = writeln!(s, "kinematics.samples = {}", k.samples);
        let l = &self.lemmas;
        let _ = writeln!(s, "lemmas.lemma = {}", l.lemma);
        let _ = writeln!(s, "lemmas.d = {}", l.d);
        let _ = writeln!(s, "lemmas.gamma = {:?}", l.gamma);
        let _ = writeln!(s, "lemmas.p = {:?}", l.p);
        let _ = writeln!(s, "lemmas.q = {:?}", l.q);
        let _ = writeln!(s, "lemmas.trials = {}", l.trials);
        let _ = writeln!(s, "lemmas.mc_samples = {}", l.mc_samples);
        let b = &self.boardgame;
        let _ = writeln!(s, "boardgame.action = {}", b.action);
        let _ = writeln!(s, "boardgame.k = {}", b.k);
        let _ = writeln!(s, "boardgame.n = {}", b.n);
        let mu: Vec<String> = b.mu.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "boardgame.mu = {}", mu.join(","));
        let _ = writeln!(s, "boardgame.samples = {}", b.samples);
        let e = &self.be;
        let _ = writeln!(s, "be.d = {}", e.d);
        let _ = writeln!(s, "be.gamma = {:?}", e.gamma);
        let _ = writeln!(s, "be.b = {}", e.b);
        let _ = writeln!(s, "be.p = {:?}", e.p);
        let _ = writeln!(s, "be.q = {:?}", e.q);
        let _ = writeln!(s, "be.alpha = {:?}", e.alpha);
        let _ = writeln!(s, "be.beta = {:?}", e.beta);
        let _ = writeln!(s, "be.mu = {:?}", e.mu);
        let _ = writeln!(s, "be.t = {:?}", e.t);
        let _ = writeln!(s, "be.depth = {}", e.depth);
        let _ = writeln!(s, "be.outer_paths = {}", e.outer_paths);
        let _ = writeln!(s, "be.f0 = {}", e.f0);
        let _ = writeln!(s, "be.conservation = {}", e.conservation);
        let h = &self.hierarchy;
        let _ = writeln!(s, "hierarchy.d = {}", h.d);
        let _ = writeln!(s, "hierarchy.gamma = {:?}", h.gamma);
        let _ = writeln!(s, "hierarchy.b = {}", h.b);
        let _ = writeln!(s, "hierarchy.p = {:?}", h.p);
        let _ = writeln!(s, "hierarchy.q = {:?}", h.q);
        let _ = writeln!(s, "hierarchy.alpha = {:?}", h.alpha);
        let _ = writeln!(s, "hierarchy.beta = {:?}", h.beta);
        let _ = writeln!(s, "hierarchy.mu = {:?}", h.mu);
        let _ = writeln!(s, "hierarchy.t = {:?}", h.t);
        let _ = writeln!(s, "hierarchy.depth = {}", h.depth);
        let _ = writeln!(s, "hierarchy.outer_paths = {}", h.outer_paths);
        let _ = writeln!(s, "hierarchy.atoms = {}", h.atoms);
        let _ = writeln!(s, "hierarchy.uq_samples = {}", h.uq_samples);
        let dc = &self.decay;
        let _ = writeln!(s, "decay.k = {}", dc.k);
        let _ = writeln!(s, "decay.n_max = {}", dc.n_max);
        let _ = writeln!(s, "decay.ratio = {:?}", dc.ratio);
        let _ = writeln!(s, "decay.c = {:?}", dc.c);
        let _ = writeln!(s, "decay.norm_f = {:?}", dc.norm_f);
        s
    }

    pub fn parse(text: &str) -> Result<RunConfig, ParseError> {
        let mut cfg = RunConfig::default();
        for (line_idx, raw) in text.lines().enumerate() {
            let line_no = line_idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let eq = raw
                .find('=')
                .ok_or_else(|| err(line_no, 1, "expected key = value"))?;
            let key = raw[..eq].trim();
            let value = raw[eq + 1..].trim();
            let vcol = eq + 2;
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| err(line_no, vcol, format!("expected an integer, got `{v}`")))
            };
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| err(line_no, vcol, format!("expected a number, got `{v}`")))
            };
            match key {
                "scenario" => {
                    cfg.scenario = Scenario::parse(value)
                        .ok_or_else(|| err(line_no, vcol, format!("unknown scenario `{value}`")))?;
                }
                "seed" => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|_| err(line_no, vcol, "expected an unsigned integer"))?;
                }
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "kinematics.dims" => {
                    cfg.kinematics.dims = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            s.trim()
                                .parse::<usize>()
                                .map_err(|_| err(line_no, vcol, "expected dims like 3,4"))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "kinematics.samples" => cfg.kinematics.samples = parse_usize(value)?,
                "lemmas.lemma" => cfg.lemmas.lemma = value.to_string(),
                "lemmas.d" => cfg.lemmas.d = parse_usize(value)?,
                "lemmas.gamma" => cfg.lemmas.gamma = parse_f64(value)?,
                "lemmas.p" => cfg.lemmas.p = parse_f64(value)?,
                "lemmas.q" => cfg.lemmas.q = parse_f64(value)?,
                "lemmas.trials" => cfg.lemmas.trials = parse_usize(value)?,
                "lemmas.mc_samples" => cfg.lemmas.mc_samples = parse_usize(value)?,
                "boardgame.action" => cfg.boardgame.action = value.to_string(),
                "boardgame.k" => cfg.boardgame.k = parse_usize(value)?,
                "boardgame.n" => cfg.boardgame.n = parse_usize(value)?,
                "boardgame.mu" => {
                    cfg.boardgame.mu = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            s.trim()
                                .parse::<usize>()
                                .map_err(|_| err(line_no, vcol, "expected targets like 2,3,1,4"))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "boardgame.samples" => cfg.boardgame.samples = parse_usize(value)?,
                "be.d" => cfg.be.d = parse_usize(value)?,
                "be.gamma" => cfg.be.gamma = parse_f64(value)?,
                "be.b" => cfg.be.b = value.to_string(),
                "be.p" => cfg.be.p = parse_f64(value)?,
                "be.q" => cfg.be.q = parse_f64(value)?,
                "be.alpha" => cfg.be.alpha = parse_f64(value)?,
                "be.beta" => cfg.be.beta = parse_f64(value)?,
                "be.mu" => cfg.be.mu = parse_f64(value)?,
                "be.t" => cfg.be.t = parse_f64(value)?,
                "be.depth" => cfg.be.depth = parse_usize(value)?,
                "be.outer_paths" => cfg.be.outer_paths = parse_usize(value)?,
                "be.f0" => cfg.be.f0 = value.to_string(),
                "be.conservation" => {
                    cfg.be.conservation = value
                        .parse::<bool>()
                        .map_err(|_| err(line_no, vcol, "expected true or false"))?;
                }
                "hierarchy.d" => cfg.hierarchy.d = parse_usize(value)?,
                "hierarchy.gamma" => cfg.hierarchy.gamma = parse_f64(value)?,
                "hierarchy.b" => cfg.hierarchy.b = value.to_string(),
                "hierarchy.p" => cfg.hierarchy.p = parse_f64(value)?,
                "hierarchy.q" => cfg.hierarchy.q = parse_f64(value)?,
                "hierarchy.alpha" => cfg.hierarchy.alpha = parse_f64(value)?,
                "hierarchy.beta" => cfg.hierarchy.beta = parse_f64(value)?,
                "hierarchy.mu" => cfg.hierarchy.mu = parse_f64(value)?,
                "hierarchy.t" => cfg.hierarchy.t = parse_f64(value)?,
                "hierarchy.depth" => cfg.hierarchy.depth = parse_usize(value)?,
                "hierarchy.outer_paths" => cfg.hierarchy.outer_paths = parse_usize(value)?,
                "hierarchy.atoms" => cfg.hierarchy.atoms = value.to_string(),
                "hierarchy.uq_samples" => cfg.hierarchy.uq_samples = parse_usize(value)?,
                "decay.k" => cfg.decay.k = parse_usize(value)?,
                "decay.n_max" => cfg.decay.n_max = parse_usize(value)?,
                "decay.ratio" => cfg.decay.ratio = parse_f64(value)?,
                "decay.c" => cfg.decay.c = parse_f64(value)?,
                "decay.norm_f" => cfg.decay.norm_f = parse_f64(value)?,
                _ => return Err(err(line_no, 1, format!("unknown key `{key}`"))),
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_lossless() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.lemmas.q = 5.25;
        cfg.boardgame.mu = vec![2, 3, 1, 4];
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn unknown_key_rejected() {
        let e = RunConfig::parse("bogus = 1\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn malformed_number_has_position() {
        let e = RunConfig::parse("seed = 1\nlemmas.q = banana\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.col > 1);
    }
}
