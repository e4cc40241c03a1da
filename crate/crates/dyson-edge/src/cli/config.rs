//! Sectioned `key = value` run configuration.
//!
//! Keys before the first `[section]` header are global. Values are numbers,
//! booleans, bare or quoted strings, and lists written either as `1, 2, 3`
//! or `[1, 2, 3]`. `#` and `;` start comments. Parsing reports every error
//! it finds rather than stopping at the first.

use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, serde::Serialize)]
pub enum ConfigError {
    #[error("line {line}: cannot parse `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in {section}")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: `{key}` in {section} expects {expected}, found `{found}`")]
    TypeMismatch { line: usize, section: String, key: String, expected: String, found: String },
    #[error("`{key}` in {section} set twice, on lines {first} and {second}")]
    DuplicateKey { section: String, key: String, first: usize, second: usize },
    #[error("section [{name}] appears twice, on lines {first} and {second}")]
    DuplicateSection { name: String, first: usize, second: usize },
    #[error("`{key}` in {section}: {rule}")]
    ConstraintViolation { section: String, key: String, rule: String },
}

/// Every error found in one configuration text.
#[derive(Debug, Clone, PartialEq, Error, serde::Serialize)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", lines.join("\n"))
    }
}

trait ConfigValue: Sized {
    const EXPECTED: &'static str;
    fn parse(raw: &str) -> Option<Self>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    const EXPECTED: &'static str = "a number";
    fn parse(raw: &str) -> Option<Self> {
        raw.parse().ok().filter(|x: &f64| x.is_finite())
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for u64 {
    const EXPECTED: &'static str = "an unsigned integer";
    fn parse(raw: &str) -> Option<Self> {
        raw.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for usize {
    const EXPECTED: &'static str = "an unsigned integer";
    fn parse(raw: &str) -> Option<Self> {
        raw.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    const EXPECTED: &'static str = "true or false";
    fn parse(raw: &str) -> Option<Self> {
        raw.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    const EXPECTED: &'static str = "a string";
    fn parse(raw: &str) -> Option<Self> {
        let s = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(raw);
        (!s.is_empty() && !s.contains('"')).then(|| s.to_string())
    }
    fn render(&self) -> String {
        format!("\"{self}\"")
    }
}

impl ConfigValue for Vec<f64> {
    const EXPECTED: &'static str = "a list of numbers";
    fn parse(raw: &str) -> Option<Self> {
        let inner = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(raw);
        inner.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f64::parse).collect()
    }
    fn render(&self) -> String {
        let items: Vec<String> = self.iter().map(|x| format!("{x:?}")).collect();
        format!("[{}]", items.join(", "))
    }
}

macro_rules! section {
    ($(#[$meta:meta])* $name:ident, $title:literal { $($(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, serde::Serialize)]
        pub struct $name {
            $($(#[$fmeta])* pub $field: $ty),*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default),* }
            }
        }

        impl $name {
            const TITLE: &'static str = $title;

            /// None for an unknown key.
            fn set(&mut self, key: &str, raw: &str, line: usize) -> Option<Result<(), ConfigError>> {
                match key {
                    $(stringify!($field) => Some(match <$ty as ConfigValue>::parse(raw) {
                        Some(v) => {
                            self.$field = v;
                            Ok(())
                        }
                        None => Err(ConfigError::TypeMismatch {
                            line,
                            section: Self::TITLE.into(),
                            key: key.into(),
                            expected: <$ty as ConfigValue>::EXPECTED.into(),
                            found: raw.into(),
                        }),
                    }),)*
                    _ => None,
                }
            }

            fn render(&self, out: &mut String) {
                $(out.push_str(&format!("{} = {}\n", stringify!($field), self.$field.render()));)*
            }
        }
    };
}

section!(
    /// Keys outside any section.
    Global, "globals" {
        master_seed: u64 = 1,
        ensemble_size: usize = 8,
        workers: usize = 1,
        out_dir: String = "out".into(),
        /// Abort the ensemble at the first failing trajectory.
        fail_fast: bool = false,
    }
);

section!(DbmSection, "[dbm]" {
    n: usize = 100,
    beta: f64 = 2.0,
    potential: Vec<f64> = vec![0.0, 0.0, 0.5],
    dt: f64 = 1e-4,
    t_end: f64 = 0.1,
    guard: f64 = 0.5,
    /// `oracle` or `classical`.
    initial: String = "oracle".into(),
    sample_times: Vec<f64> = vec![0.05, 0.1],
});

section!(MkvSection, "[mkv]" {
    /// `semicircle` or `kesten_mckay`.
    initial: String = "semicircle".into(),
    km_degree: f64 = 4.0,
    potential: Vec<f64> = vec![0.0, 0.0, 0.5],
    t_end: f64 = 0.2,
    dt: f64 = 1e-3,
    probes_re: Vec<f64> = vec![2.2, 2.05, 1.5],
    probes_im: Vec<f64> = vec![0.05, 0.2, 0.5],
});

section!(SeriesSection, "[series]" {
    initial: String = "kesten_mckay".into(),
    km_degree: f64 = 4.0,
    potential: Vec<f64> = vec![0.0, 0.0, 0.5, 0.0, 0.1],
    order: usize = 16,
    t_end: f64 = 0.05,
    dt: f64 = 1e-4,
});

section!(RigiditySection, "[rigidity]" {
    n: usize = 100,
    beta: f64 = 2.0,
    t_end: f64 = 0.2,
    dt: f64 = 1e-4,
    sample_count: usize = 4,
    m: f64 = 5.0,
    i_max: usize = 50,
});

section!(CltSection, "[clt]" {
    n: usize = 100,
    beta: f64 = 2.0,
    /// η = N^{−eta_exponent}.
    eta_exponent: f64 = 0.4,
    /// t = N^{−t_exponent}.
    t_exponent: f64 = 0.15,
    dt: f64 = 1e-4,
    points_re: Vec<f64> = vec![1.0, 2.0, 1.0],
    points_im: Vec<f64> = vec![0.0, 0.0, 1.0],
});

section!(TwSection, "[tw]" {
    n: usize = 100,
    beta: f64 = 2.0,
    /// Quartic coefficient of V; the quadratic one is matched so the edge
    /// amplitude equals the semicircle's.
    quartic: f64 = 0.01,
    /// t₁ = N^{−1/3 + omega}.
    omega: f64 = 0.1,
    dt: f64 = 1e-4,
    /// `transported` (oracle sample moved onto the equilibrium measure) or `classical`.
    initial: String = "transported".into(),
});

section!(InterpSection, "[interp]" {
    n: usize = 100,
    beta: f64 = 2.0,
    quartic: f64 = 0.01,
    omega: f64 = 0.1,
    dt: f64 = 1e-4,
    alphas: Vec<f64> = vec![0.0, 0.5, 1.0],
    particles: usize = 10,
    initial: String = "transported".into(),
});

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct RunConfig {
    pub global: Global,
    pub dbm: Option<DbmSection>,
    pub mkv: Option<MkvSection>,
    pub series: Option<SeriesSection>,
    pub rigidity: Option<RigiditySection>,
    pub clt: Option<CltSection>,
    pub tw: Option<TwSection>,
    pub interp: Option<InterpSection>,
}

enum Target {
    Global,
    Dbm,
    Mkv,
    Series,
    Rigidity,
    Clt,
    Tw,
    Interp,
    Unknown,
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quote = !in_quote,
            '#' | ';' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Parses and validates a configuration, collecting every error.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    let mut seen_keys: HashMap<(String, String), usize> = HashMap::new();
    let mut seen_sections: HashMap<String, usize> = HashMap::new();
    let mut target = Target::Global;
    let mut section_name = String::from("globals");
    for (k, raw_line) in text.lines().enumerate() {
        let line = k + 1;
        let body = strip_comment(raw_line).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim().to_string();
            if let Some(&first) = seen_sections.get(&name) {
                errors.push(ConfigError::DuplicateSection { name: name.clone(), first, second: line });
            } else {
                seen_sections.insert(name.clone(), line);
            }
            target = match name.as_str() {
                "dbm" => {
                    cfg.dbm.get_or_insert_with(Default::default);
                    Target::Dbm
                }
                "mkv" => {
                    cfg.mkv.get_or_insert_with(Default::default);
                    Target::Mkv
                }
                "series" => {
                    cfg.series.get_or_insert_with(Default::default);
                    Target::Series
                }
                "rigidity" => {
                    cfg.rigidity.get_or_insert_with(Default::default);
                    Target::Rigidity
                }
                "clt" => {
                    cfg.clt.get_or_insert_with(Default::default);
                    Target::Clt
                }
                "tw" => {
                    cfg.tw.get_or_insert_with(Default::default);
                    Target::Tw
                }
                "interp" => {
                    cfg.interp.get_or_insert_with(Default::default);
                    Target::Interp
                }
                _ => {
                    errors.push(ConfigError::UnknownSection { line, name: name.clone() });
                    Target::Unknown
                }
            };
            section_name = format!("[{name}]");
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            errors.push(ConfigError::Syntax { line, text: raw_line.to_string() });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            errors.push(ConfigError::Syntax { line, text: raw_line.to_string() });
            continue;
        }
        let slot = (section_name.clone(), key.to_string());
        if let Some(&first) = seen_keys.get(&slot) {
            errors.push(ConfigError::DuplicateKey {
                section: section_name.clone(),
                key: key.into(),
                first,
                second: line,
            });
            continue;
        }
        seen_keys.insert(slot, line);
        let outcome = match target {
            Target::Global => cfg.global.set(key, value, line),
            Target::Dbm => cfg.dbm.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Mkv => cfg.mkv.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Series => cfg.series.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Rigidity => cfg.rigidity.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Clt => cfg.clt.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Tw => cfg.tw.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Interp => cfg.interp.as_mut().and_then(|s| s.set(key, value, line)),
            Target::Unknown => continue,
        };
        match outcome {
            Some(Ok(())) => {}
            Some(Err(e)) => errors.push(e),
            None => errors.push(ConfigError::UnknownKey { line, section: section_name.clone(), key: key.into() }),
        }
    }
    errors.extend(validate(&cfg));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

struct Rules<'a> {
    section: &'a str,
    errors: Vec<ConfigError>,
}

impl Rules<'_> {
    fn check(&mut self, ok: bool, key: &str, rule: impl Into<String>) {
        if !ok {
            self.errors.push(ConfigError::ConstraintViolation {
                section: self.section.into(),
                key: key.into(),
                rule: rule.into(),
            });
        }
    }

    fn beta(&mut self, beta: f64) {
        self.check(beta >= 1.0, "beta", format!("beta must be >= 1, got {beta}"));
    }

    fn n(&mut self, n: usize) {
        self.check(n >= 2, "n", format!("n must be >= 2, got {n}"));
    }

    fn positive(&mut self, key: &str, x: f64) {
        self.check(x > 0.0, key, format!("{key} must be > 0, got {x}"));
    }

    fn one_of(&mut self, key: &str, value: &str, allowed: &[&str]) {
        self.check(allowed.contains(&value), key, format!("{key} must be one of {allowed:?}, got `{value}`"));
    }
}

fn validate(cfg: &RunConfig) -> Vec<ConfigError> {
    let mut out = Vec::new();
    let mut r = Rules { section: Global::TITLE, errors: Vec::new() };
    r.check(cfg.global.ensemble_size >= 1, "ensemble_size", "ensemble_size must be >= 1");
    out.append(&mut r.errors);
    if let Some(s) = &cfg.dbm {
        let mut r = Rules { section: DbmSection::TITLE, errors: Vec::new() };
        r.n(s.n);
        r.beta(s.beta);
        r.positive("dt", s.dt);
        r.check(s.t_end >= 0.0, "t_end", "t_end must be >= 0");
        r.check(s.guard > 0.0 && s.guard < 1.0, "guard", "guard must lie in (0, 1)");
        r.check(!s.potential.is_empty(), "potential", "potential needs at least one coefficient");
        r.one_of("initial", &s.initial, &["oracle", "classical"]);
        r.check(
            s.sample_times.iter().all(|&t| t >= 0.0 && t <= s.t_end),
            "sample_times",
            "sample times must lie in [0, t_end]",
        );
        out.append(&mut r.errors);
    }
    if let Some(s) = &cfg.mkv {
        let mut r = Rules { section: MkvSection::TITLE, errors: Vec::new() };
        r.one_of("initial", &s.initial, &["semicircle", "kesten_mckay"]);
        r.check(s.km_degree > 2.0, "km_degree", "km_degree must be > 2");
        r.positive("dt", s.dt);
        r.check(s.t_end >= 0.0, "t_end", "t_end must be >= 0");
        r.check(s.probes_re.len() == s.probes_im.len(), "probes_im", "probes_re and probes_im must have equal length");
        r.check(s.probes_im.iter().all(|&y| y > 0.0), "probes_im", "probe imaginary parts must be > 0");
        out.append(&mut r.errors);
    }
    if let Some(s) = &cfg.series {
        let mut r = Rules { section: SeriesSection::TITLE, errors: Vec::new() };
        r.one_of("initial", &s.initial, &["semicircle", "kesten_mckay"]);
        r.check(s.km_degree > 2.0, "km_degree", "km_degree must be > 2");
        r.check(s.order >= 2, "order", "order must be >= 2");
        r.positive("dt", s.dt);
        r.positive("t_end", s.t_end);
        out.append(&mut r.errors);
    }
    if let Some(s) = &cfg.rigidity {
        let mut r = Rules { section: RigiditySection::TITLE, errors: Vec::new() };
        r.n(s.n);
        r.beta(s.beta);
        r.positive("dt", s.dt);
        r.positive("t_end", s.t_end);
        r.positive("m", s.m);
        r.check(s.sample_count >= 1, "sample_count", "sample_count must be >= 1");
        r.check(s.i_max >= 1 && s.i_max <= s.n, "i_max", "i_max must lie in [1, n]");
        out.append(&mut r.errors);
    }
    if let Some(s) = &cfg.clt {
        let mut r = Rules { section: CltSection::TITLE, errors: Vec::new() };
        r.n(s.n);
        r.beta(s.beta);
        r.positive("dt", s.dt);
        r.check(
            s.eta_exponent > 0.0 && s.eta_exponent < 2.0 / 3.0,
            "eta_exponent",
            "eta_exponent must lie in (0, 2/3)",
        );
        r.check(s.t_exponent > 0.0 && s.t_exponent < 1.0 / 3.0, "t_exponent", "t_exponent must lie in (0, 1/3)");
        r.check(
            !s.points_re.is_empty() && s.points_re.len() == s.points_im.len(),
            "points_im",
            "points_re and points_im must be non-empty and of equal length",
        );
        r.check(s.points_im.iter().all(|&y| y >= 0.0), "points_im", "points must lie in the closed upper half-plane");
        out.append(&mut r.errors);
    }
    if let Some(s) = &cfg.tw {
        let mut r = Rules { section: TwSection::TITLE, errors: Vec::new() };
        r.n(s.n);
        r.beta(s.beta);
        r.positive("dt", s.dt);
        r.check(
            s.quartic >= 0.0 && s.quartic <= 0.015,
            "quartic",
            "quartic must lie in [0, 0.015] for the amplitude match",
        );
        r.check(s.omega >= 0.0 && s.omega < 1.0 / 3.0, "omega", "omega must lie in [0, 1/3)");
        r.one_of("initial", &s.initial, &["transported", "classical"]);
        out.append(&mut r.errors);
    }
    if let Some(s) = &cfg.interp {
        let mut r = Rules { section: InterpSection::TITLE, errors: Vec::new() };
        r.n(s.n);
        r.beta(s.beta);
        r.positive("dt", s.dt);
        r.check(
            s.quartic >= 0.0 && s.quartic <= 0.015,
            "quartic",
            "quartic must lie in [0, 0.015] for the amplitude match",
        );
        r.check(s.omega >= 0.0 && s.omega < 1.0 / 3.0, "omega", "omega must lie in [0, 1/3)");
        r.check(
            s.alphas.iter().all(|a| (0.0..=1.0).contains(a)) && s.alphas.contains(&0.0) && s.alphas.contains(&1.0),
            "alphas",
            "alphas must lie in [0, 1] and include 0 and 1",
        );
        r.check(s.particles >= 1 && s.particles <= s.n, "particles", "particles must lie in [1, n]");
        r.one_of("initial", &s.initial, &["transported", "classical"]);
        out.append(&mut r.errors);
    }
    out
}

impl RunConfig {
    /// Canonical text form; parsing it gives back an identical config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.global.render(&mut out);
        macro_rules! emit {
            ($field:ident) => {
                if let Some(s) = &self.$field {
                    out.push_str(&format!("\n[{}]\n", stringify!($field)));
                    s.render(&mut out);
                }
            };
        }
        emit!(dbm);
        emit!(mkv);
        emit!(series);
        emit!(rigidity);
        emit!(clt);
        emit!(tw);
        emit!(interp);
        out
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.render().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trips() {
        let text = "master_seed = 7\n[dbm]\nn = 50\nbeta = 1\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.global.master_seed, 7);
        let dbm = cfg.dbm.as_ref().unwrap();
        assert_eq!((dbm.n, dbm.beta), (50, 1.0));
        assert!(cfg.mkv.is_none());
        assert_eq!(parse_config(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn small_beta_is_a_constraint_violation() {
        let errs = parse_config("[dbm]\nbeta = 0.5\n").unwrap_err();
        assert_eq!(errs.0.len(), 1);
        assert!(
            matches!(&errs.0[0], ConfigError::ConstraintViolation { key, rule, .. } if key == "beta" && rule.contains(">= 1"))
        );
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let errs = parse_config("[clt]\nn = 10\n\nn = 20\n").unwrap_err();
        assert_eq!(
            errs.0,
            vec![ConfigError::DuplicateKey { section: "[clt]".into(), key: "n".into(), first: 2, second: 4 }]
        );
        assert!(errs.to_string().contains("lines 2 and 4"));
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "bogus = 1\n[dbm]\nn = ten\nbeta = 0.2\n[nope]\nx = 1\nnot a pair\n";
        let errs = parse_config(text).unwrap_err().0;
        assert!(errs.iter().any(|e| matches!(e, ConfigError::UnknownKey { line: 1, .. })));
        assert!(errs.iter().any(|e| matches!(e, ConfigError::TypeMismatch { line: 3, .. })));
        assert!(errs.iter().any(|e| matches!(e, ConfigError::UnknownSection { line: 5, .. })));
        assert!(errs.iter().any(|e| matches!(e, ConfigError::Syntax { line: 7, .. })));
        assert!(errs.iter().any(|e| matches!(e, ConfigError::ConstraintViolation { .. })));
    }

    #[test]
    fn list_forms_and_comments() {
        let a = parse_config("[interp]\nalphas = 0, 0.25, 1 # three slices\n").unwrap();
        let b = parse_config("[interp]\nalphas = [0, 0.25, 1]\n; comment\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.interp.unwrap().alphas, vec![0.0, 0.25, 1.0]);
        let q = parse_config("out_dir = \"a dir\"\n").unwrap();
        assert_eq!(q.global.out_dir, "a dir");
    }

    #[test]
    fn every_section_round_trips() {
        let text = "[dbm]\n[mkv]\n[series]\n[rigidity]\n[clt]\n[tw]\n[interp]\n";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.render()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }
}
