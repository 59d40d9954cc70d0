//! Flat `key = value` settings per subcommand, layered as defaults, then
//! the `--config` file, then command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dkd_core::metrics::Reference;
use dkd_core::train::{Ablation, TrainConfig};
use dkd_core::DkdError;

pub type Result<T> = std::result::Result<T, DkdError>;

pub trait Settings: Sized {
    const COMMAND: &'static str;

    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Every field in a form `set` reads back.
    fn to_kv(&self) -> String;

    fn check(&self) -> Result<()> {
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| DkdError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_reference(value: &str) -> Result<Reference> {
    match value.trim() {
        "person" | "person_size" => Ok(Reference::PersonSize),
        "torso" | "torso_size" => Ok(Reference::TorsoSize),
        other => Err(DkdError::Config(format!("unknown reference `{other}` (person or torso)"))),
    }
}

pub fn reference_name(r: Reference) -> &'static str {
    match r {
        Reference::PersonSize => "person",
        Reference::TorsoSize => "torso",
    }
}

fn required<'a>(key: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| DkdError::Config(format!("`{key}` is required")))
}

fn path_line(s: &mut String, key: &str, p: &Option<PathBuf>) {
    if let Some(p) = p {
        let _ = writeln!(s, "{key} = {}", p.display());
    }
}

/// Parses a settings file, then applies flag overrides in order.
pub fn resolve<S: Settings>(mut s: S, config: Option<&Path>, overrides: &[(&str, String)]) -> Result<S> {
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| DkdError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DkdError::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                if v != S::COMMAND {
                    return Err(DkdError::Config(format!(
                        "config {} is for `{v}`, not `{}`",
                        path.display(),
                        S::COMMAND
                    )));
                }
                continue;
            }
            s.set(k, v)?;
        }
    }
    for (k, v) in overrides {
        s.set(k, v)?;
    }
    s.check()?;
    Ok(s)
}

/// The snapshot written as `config.resolved`.
pub fn snapshot<S: Settings>(s: &S) -> String {
    format!("command = {}\n{}", S::COMMAND, s.to_kv())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenData {
    pub clips: usize,
    pub seed: u64,
    pub frames: usize,
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub occlusion_probability: f64,
    pub distractors: bool,
}

impl Default for GenData {
    fn default() -> Self {
        Self {
            clips: 64,
            seed: 0,
            frames: 5,
            joints: 5,
            height: 128,
            width: 128,
            occlusion_probability: 0.0,
            distractors: false,
        }
    }
}

impl Settings for GenData {
    const COMMAND: &'static str = "gen-data";

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "clips" => self.clips = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "frames" | "clip_length" => self.frames = parse(key, v)?,
            "joints" => self.joints = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "occlusion_probability" => self.occlusion_probability = parse(key, v)?,
            "distractors" => self.distractors = parse(key, v)?,
            other => return Err(DkdError::Config(format!("unknown key `{other}` for gen-data"))),
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        format!(
            "clips = {}\nseed = {}\nframes = {}\njoints = {}\nheight = {}\nwidth = {}\nocclusion_probability = {}\ndistractors = {}\n",
            self.clips, self.seed, self.frames, self.joints, self.height, self.width, self.occlusion_probability, self.distractors
        )
    }

    fn check(&self) -> Result<()> {
        if self.clips == 0 {
            return Err(DkdError::Config("`clips` must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Train {
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Train {
    pub fn dataset(&self) -> Result<&Path> {
        required("dataset", &self.dataset)
    }
}

impl Settings for Train {
    const COMMAND: &'static str = "train";

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            _ => self.train.set(key, v)?,
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        let mut s = String::new();
        path_line(&mut s, "dataset", &self.dataset);
        s + &self.train.to_kv()
    }

    fn check(&self) -> Result<()> {
        self.dataset()?;
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eval {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Inference path; the trained ablation when unset.
    pub ablation: Option<Ablation>,
    pub alpha: f64,
    /// Normalization shown in the one-line summary; both are always written.
    pub reference: Reference,
}

impl Default for Eval {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            ablation: None,
            alpha: 0.2,
            reference: Reference::PersonSize,
        }
    }
}

impl Eval {
    pub fn checkpoint(&self) -> Result<&Path> {
        required("checkpoint", &self.checkpoint)
    }

    pub fn dataset(&self) -> Result<&Path> {
        required("dataset", &self.dataset)
    }
}

impl Settings for Eval {
    const COMMAND: &'static str = "eval";

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "ablation" => self.ablation = Some(v.parse()?),
            "alpha" => self.alpha = parse(key, v)?,
            "reference" => self.reference = parse_reference(v)?,
            other => return Err(DkdError::Config(format!("unknown key `{other}` for eval"))),
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        let mut s = String::new();
        path_line(&mut s, "checkpoint", &self.checkpoint);
        path_line(&mut s, "dataset", &self.dataset);
        if let Some(a) = self.ablation {
            let _ = writeln!(s, "ablation = {}", a.as_str());
        }
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "reference = {}", reference_name(self.reference));
        s
    }

    fn check(&self) -> Result<()> {
        self.checkpoint()?;
        self.dataset()?;
        if !(self.alpha > 0.0) {
            return Err(DkdError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Infer {
    pub checkpoint: Option<PathBuf>,
    /// One clip directory.
    pub clip: Option<PathBuf>,
    pub ablation: Option<Ablation>,
    pub overlay: bool,
}

impl Default for Infer {
    fn default() -> Self {
        Self {
            checkpoint: None,
            clip: None,
            ablation: None,
            overlay: true,
        }
    }
}

impl Infer {
    pub fn checkpoint(&self) -> Result<&Path> {
        required("checkpoint", &self.checkpoint)
    }

    pub fn clip(&self) -> Result<&Path> {
        required("clip", &self.clip)
    }
}

impl Settings for Infer {
    const COMMAND: &'static str = "infer";

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "clip" | "dataset" => self.clip = Some(PathBuf::from(v)),
            "ablation" => self.ablation = Some(v.parse()?),
            "overlay" => self.overlay = parse(key, v)?,
            other => return Err(DkdError::Config(format!("unknown key `{other}` for infer"))),
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        let mut s = String::new();
        path_line(&mut s, "checkpoint", &self.checkpoint);
        path_line(&mut s, "clip", &self.clip);
        if let Some(a) = self.ablation {
            let _ = writeln!(s, "ablation = {}", a.as_str());
        }
        let _ = writeln!(s, "overlay = {}", self.overlay);
        s
    }

    fn check(&self) -> Result<()> {
        self.checkpoint()?;
        self.clip()?;
        Ok(())
    }
}

/// Model shape and sizes come from the training keys; `clip_length` sets
/// the video length of the per-video count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Flops {
    pub train: TrainConfig,
}

impl Settings for Flops {
    const COMMAND: &'static str = "flops";

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        self.train.set(key, v)
    }

    fn to_kv(&self) -> String {
        self.train.to_kv()
    }

    fn check(&self) -> Result<()> {
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablate {
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub ablations: Vec<Ablation>,
    pub alpha: f64,
    /// Shared by every sub-run; its `seed` and `ablation` are replaced.
    pub train: TrainConfig,
}

impl Default for Ablate {
    fn default() -> Self {
        Self {
            dataset: None,
            test_dataset: None,
            seeds: vec![0, 1, 2],
            ablations: Ablation::ALL.to_vec(),
            alpha: 0.2,
            train: TrainConfig::default(),
        }
    }
}

impl Ablate {
    pub fn dataset(&self) -> Result<&Path> {
        required("dataset", &self.dataset)
    }

    pub fn test_dataset(&self) -> Result<&Path> {
        required("test_dataset", &self.test_dataset)
    }
}

impl Settings for Ablate {
    const COMMAND: &'static str = "ablate";

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "test_dataset" => self.test_dataset = Some(PathBuf::from(v)),
            "seeds" => self.seeds = parse_list(key, v)?,
            "seed" => self.seeds = vec![parse(key, v)?],
            "ablations" | "ablation" => {
                self.ablations = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()?
            }
            "alpha" => self.alpha = parse(key, v)?,
            _ => self.train.set(key, v)?,
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        let mut s = String::new();
        path_line(&mut s, "dataset", &self.dataset);
        path_line(&mut s, "test_dataset", &self.test_dataset);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let abl: Vec<&str> = self.ablations.iter().map(|a| a.as_str()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "ablations = {}", abl.join(","));
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let train: String = self
            .train
            .to_kv()
            .lines()
            .filter(|l| !l.starts_with("seed ") && !l.starts_with("ablation "))
            .map(|l| format!("{l}\n"))
            .collect();
        s + &train
    }

    fn check(&self) -> Result<()> {
        self.dataset()?;
        self.test_dataset()?;
        if self.seeds.is_empty() || self.ablations.is_empty() {
            return Err(DkdError::Config("`seeds` and `ablations` must be non-empty".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(DkdError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        for &a in &self.ablations {
            let mut cfg = self.train.clone();
            cfg.ablation = a;
            cfg.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_reproduces_settings() {
        let mut a = Ablate::default();
        a.set("dataset", "d/train").unwrap();
        a.set("test_dataset", "d/test").unwrap();
        a.set("seeds", "4, 5").unwrap();
        a.set("ablations", "full,baseline").unwrap();
        a.set("max_steps", "30").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.resolved");
        fs::write(&path, snapshot(&a)).unwrap();
        assert_eq!(resolve(Ablate::default(), Some(&path), &[]).unwrap(), a);
    }

    #[test]
    fn flags_override_the_file_and_wrong_command_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "clips = 3\nseed = 9\n").unwrap();
        let g = resolve(GenData::default(), Some(&path), &[("seed", "2".into())]).unwrap();
        assert_eq!((g.clips, g.seed), (3, 2));
        fs::write(&path, "command = train\n").unwrap();
        assert!(resolve(GenData::default(), Some(&path), &[]).is_err());
        assert!(resolve(GenData::default(), None, &[("bogus", "1".into())]).is_err());
    }
}
