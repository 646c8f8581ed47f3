//! Run configuration: one TOML file with a section per pipeline step, plus
//! dotted-key overrides from the command line.

use std::path::{Path, PathBuf};

use hiflow_core::hiflow::ScheduleSpec;
use hiflow_core::motionvae::VaeConfig;
use hiflow_core::pipeline::GenerationConfig;
use hiflow_core::synthdata::{CorpusSpec, Program, Split};
use hiflow_core::tmdit::TmditConfig;
use hiflow_core::trainer::TrainConfig;
use hiflow_core::ScaleSchedule;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run derives from it.
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub data: DataSection,
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default)]
    pub tmdit: TmditConfig,
    #[serde(default)]
    pub train_vae: TrainConfig,
    #[serde(default = "tmdit_train_default")]
    pub train_tmdit: TrainConfig,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    #[serde(default)]
    pub retention: RetentionSection,
    #[serde(default)]
    pub inspect: InspectSection,
}

fn tmdit_train_default() -> TrainConfig {
    TrainConfig {
        steps: 10_000,
        ..TrainConfig::default()
    }
}

/// Inputs produced by earlier commands. Relative paths are taken from the
/// working directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub tmdit: Option<PathBuf>,
    /// Generated motions to evaluate (corpus format).
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_per_program: usize,
    pub programs: Vec<Program>,
    pub frames_min: usize,
    pub frames_max: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let spec = CorpusSpec::new(200, 0);
        Self {
            n_per_program: spec.n_per_program,
            programs: spec.programs,
            frames_min: spec.frames_min,
            frames_max: spec.frames_max,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub prompts: Vec<String>,
    pub prompt_file: Option<PathBuf>,
    /// Instead of prompts, regenerate every record of this corpus split,
    /// keeping its label.
    pub from_split: Option<Split>,
    /// Samples per prompt.
    pub count: usize,
    /// Euler steps per stage; a single value applies to every stage.
    pub steps_per_stage: Vec<usize>,
    pub guidance: f64,
    pub frames: usize,
    pub batch_size: usize,
}

impl SampleSection {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            steps_per_stage: self.steps_per_stage.clone(),
            guidance: self.guidance,
            frames: self.frames,
            batch_size: self.batch_size,
        }
    }
}

impl Default for SampleSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            prompts: Vec::new(),
            prompt_file: None,
            from_split: None,
            count: 1,
            steps_per_stage: g.steps_per_stage,
            guidance: g.guidance,
            frames: g.frames,
            batch_size: g.batch_size,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Reference split of the corpus.
    pub split: Split,
    pub diversity_pairs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            diversity_pairs: 300,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub seeds: usize,
    pub steps_per_stage: Vec<usize>,
    pub prompt: String,
    /// Latent frames of the diagnostic trajectories.
    pub frames: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            seeds: 4,
            steps_per_stage: vec![10],
            prompt: "a person jumps up".into(),
            frames: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetentionSection {
    pub ratios: Vec<f64>,
    pub split: Split,
}

impl Default for RetentionSection {
    fn default() -> Self {
        Self {
            ratios: hiflow_core::evalkit::DEFAULT_RATIOS.to_vec(),
            split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InspectSection {
    /// Full-resolution length the stage lengths are computed from.
    pub frames: usize,
}

impl Default for InspectSection {
    fn default() -> Self {
        Self { frames: 16 }
    }
}

/// The raw file text plus the parsed configuration.
pub struct LoadedConfig {
    pub text: String,
    pub overrides: Vec<String>,
    pub run: RunConfig,
}

impl RunConfig {
    pub fn seed(&self) -> Result<u64, Failure> {
        self.seed
            .ok_or_else(|| Failure::Config("`seed` is mandatory (set it in the file or pass --seed)".into()))
    }

    pub fn schedule(&self) -> Result<ScaleSchedule, Failure> {
        let spec = self
            .schedule
            .clone()
            .ok_or_else(|| Failure::Config("the [schedule] section is missing".into()))?;
        Ok(ScaleSchedule::new(spec.scales, spec.times)?)
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec, Failure> {
        let d = &self.data;
        let spec = CorpusSpec {
            n_per_program: d.n_per_program,
            programs: d.programs.clone(),
            frames_min: d.frames_min,
            frames_max: d.frames_max,
            seed: self.seed()?,
        };
        spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn path(&self, which: &str) -> Result<&Path, Failure> {
        let p = match which {
            "corpus" => &self.paths.corpus,
            "vae" => &self.paths.vae,
            "tmdit" => &self.paths.tmdit,
            "samples" => &self.paths.samples,
            _ => &None,
        };
        p.as_deref()
            .ok_or_else(|| Failure::Config(format!("paths.{which} is required for this command")))
    }
}

/// Sets `dotted.key = value` in a TOML table. The value is parsed as a TOML
/// literal when possible and taken as a plain string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Failure::Usage(format!("malformed override key {key:?}")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = root;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Reads the config file and applies `--set` overrides, then `--seed`.
pub fn load(path: &Path, sets: &[String], seed: Option<u64>) -> Result<LoadedConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut overrides = Vec::new();
    for s in sets {
        apply_override(&mut table, s)?;
        overrides.push(format!("--set {s}"));
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).map_err(|_| Failure::Usage(format!("seed {seed} does not fit a TOML integer")))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
        overrides.push(format!("--seed {seed}"));
    }
    let run: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig { text, overrides, run })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(s: &str) -> toml::Table {
        toml::from_str(s).unwrap()
    }

    #[test]
    fn overrides_create_and_replace_keys() {
        let mut t = table("seed = 1\n[train_vae]\nsteps = 10\n");
        apply_override(&mut t, "train_vae.steps=20").unwrap();
        apply_override(&mut t, "sample.prompts=[\"a person jumps up\"]").unwrap();
        apply_override(&mut t, "paths.corpus = out/corpus.bin").unwrap();
        assert_eq!(t["train_vae"]["steps"].as_integer(), Some(20));
        assert_eq!(t["sample"]["prompts"][0].as_str(), Some("a person jumps up"));
        assert_eq!(t["paths"]["corpus"].as_str(), Some("out/corpus.bin"));
        assert!(matches!(apply_override(&mut t, "novalue"), Err(Failure::Usage(_))));
        assert!(matches!(apply_override(&mut t, "seed.x=1"), Err(Failure::Config(_))));
        assert!(matches!(apply_override(&mut t, "a..b=1"), Err(Failure::Usage(_))));
    }

    #[test]
    fn unknown_sections_are_config_errors() {
        let v = toml::Value::Table(table("seed = 1\n[bogus]\nx = 1\n"));
        assert!(v.try_into::<RunConfig>().is_err());
    }

    #[test]
    fn defaults_follow_desk_scale() {
        let run: RunConfig = toml::Value::Table(table("seed = 3")).try_into().unwrap();
        assert_eq!(run.train_vae.steps, 5000);
        assert_eq!(run.train_tmdit.steps, 10_000);
        assert_eq!(run.train_tmdit.batch_size, 32);
        assert_eq!(run.corpus_spec().unwrap().seed, 3);
        assert!(run.schedule().is_err());
        assert!(run.path("vae").is_err());
    }
}
