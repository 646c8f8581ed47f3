//! One function per subcommand. Each reads its inputs from the run config,
//! writes artifacts under the output directory and prints a short summary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use hiflow_core::evalkit::{
    diversity, frechet_pose_distance, noise_consistency_diagnostic, retention_study, retention_table, PoseFeatureSet,
    RuleSet,
};
use hiflow_core::motionvae::{MotionAutoencoder, Normalizer};
use hiflow_core::pipeline::{trajectories_tsv, GenerationConfig, Generator};
use hiflow_core::synthdata::{splitmix64, Corpus, CorpusRecord, MotionLabel, Program, Split, Vocabulary};
use hiflow_core::tmdit::{TextMotionModel, TmditConfig};
use hiflow_core::trainer::{train_tmdit, train_vae, TrainLog};
use hiflow_core::{DType, MotionSequence};

use crate::config::{self, LoadedConfig, RunConfig};
use crate::{Cli, Command, Failure};

/// Loaded config plus the resolved output directory.
struct Ctx<'a> {
    cfg: &'a LoadedConfig,
    out: PathBuf,
    explicit_out: bool,
}

impl Ctx<'_> {
    fn run(&self) -> &RunConfig {
        &self.cfg.run
    }

    /// Creates the output directory and copies the config into it.
    fn prepare(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out).map_err(|e| io_failure(&self.out, e))?;
        write(&self.out.join("config.toml"), self.cfg.text.as_bytes())?;
        let overrides = self.out.join("overrides.txt");
        if self.cfg.overrides.is_empty() {
            if overrides.exists() {
                fs::remove_file(&overrides).map_err(|e| io_failure(&overrides, e))?;
            }
        } else {
            write(&overrides, (self.cfg.overrides.join("\n") + "\n").as_bytes())?;
        }
        Ok(())
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    let cfg = config::load(path, &cli.set, cli.seed)?;
    let ctx = Ctx {
        cfg: &cfg,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        explicit_out: cli.out.is_some(),
    };
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::TrainVae => train_vae_cmd(&ctx),
        Command::TrainTmdit => train_tmdit_cmd(&ctx),
        Command::Sample { prompt, prompt_file } => sample(&ctx, prompt, prompt_file.as_deref()),
        Command::Eval => eval(&ctx),
        Command::Diagnose => diagnose(&ctx),
        Command::Retention => retention(&ctx),
        Command::InspectSchedule => inspect_schedule(&ctx),
    }
}

fn gen_data(ctx: &Ctx) -> Result<(), Failure> {
    let spec = ctx.run().corpus_spec()?;
    let corpus = Corpus::generate(&spec)?;
    ctx.prepare()?;
    let path = ctx.artifact("corpus.bin");
    corpus.write(&path)?;
    let count = |s| corpus.split(s).len();
    println!(
        "wrote {} records ({} train, {} val, {} test) to {}",
        corpus.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        path.display()
    );
    Ok(())
}

fn read_corpus(ctx: &Ctx) -> Result<Corpus, Failure> {
    Ok(Corpus::read(ctx.run().path("corpus")?)?)
}

/// Prints every hundredth logged row and the last one.
fn progress(name: &'static str, total: usize) -> impl FnMut(&TrainLog) {
    move |log: &TrainLog| {
        let row = log.rows.last().expect("observer sees a row");
        let step = row[0] as usize;
        if step % 100 == 0 || step + 1 == total {
            let cells: Vec<String> = log
                .columns
                .iter()
                .zip(row)
                .skip(1)
                .map(|(c, v)| format!("{c}={v:.5}"))
                .collect();
            eprintln!("[{name}] step {step}/{total} {}", cells.join(" "));
        }
    }
}

fn train_vae_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let run = ctx.run();
    let corpus = read_corpus(ctx)?;
    let mut tc = run.train_vae.clone();
    tc.seed = run.seed()?;
    ctx.prepare()?;
    let (ae, log) = train_vae(&corpus, &run.vae, &tc, &mut progress("vae", tc.steps))?;
    let path = ctx.artifact("vae.ckpt");
    ae.save(&path)?;
    write(&ctx.artifact("vae_metrics.tsv"), log.to_tsv().as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The TMDiT config with the vocabulary size of `vocab` and the scales of
/// the run's schedule.
fn tmdit_config(run: &RunConfig, vocab: &Vocabulary) -> Result<TmditConfig, Failure> {
    let mut tm = run.tmdit.clone();
    tm.vocab_size = vocab.len();
    tm.scales = run.schedule()?.scales().to_vec();
    Ok(tm)
}

fn load_vae(ctx: &Ctx) -> Result<MotionAutoencoder, Failure> {
    Ok(MotionAutoencoder::load(ctx.run().path("vae")?, DType::F32)?)
}

fn load_tmdit(ctx: &Ctx) -> Result<TextMotionModel, Failure> {
    Ok(TextMotionModel::load(ctx.run().path("tmdit")?, DType::F32)?)
}

fn train_tmdit_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let run = ctx.run();
    let corpus = read_corpus(ctx)?;
    let ae = load_vae(ctx)?;
    let sched = run.schedule()?;
    let tm = tmdit_config(run, corpus.vocabulary())?;
    let mut tc = run.train_tmdit.clone();
    tc.seed = run.seed()?;
    ctx.prepare()?;
    let (model, log) = train_tmdit(&corpus, &ae, &tm, &sched, &tc, &mut progress("tmdit", tc.steps))?;
    let path = ctx.artifact("tmdit.ckpt");
    model.save(&path)?;
    write(&ctx.artifact("tmdit_metrics.tsv"), log.to_tsv().as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_prompt_file(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Prompts with their labels when known. Command-line prompts replace the
/// configured ones.
fn collect_prompts(
    ctx: &Ctx,
    flags: &[String],
    flag_file: Option<&Path>,
) -> Result<Vec<(String, Option<MotionLabel>, Split)>, Failure> {
    let s = &ctx.run().sample;
    let mut texts: Vec<String> = flags.to_vec();
    if let Some(p) = flag_file {
        texts.extend(read_prompt_file(p)?);
    }
    if texts.is_empty() {
        if let Some(split) = s.from_split {
            let corpus = read_corpus(ctx)?;
            return Ok(corpus
                .split(split)
                .into_iter()
                .map(|r| (r.text.clone(), r.label, split))
                .collect());
        }
        texts.extend(s.prompts.iter().cloned());
        if let Some(p) = &s.prompt_file {
            texts.extend(read_prompt_file(p)?);
        }
    }
    if texts.is_empty() {
        return Err(Failure::Config(
            "no prompts: pass --prompt/--prompt-file or set sample.prompts, sample.prompt_file or sample.from_split".into(),
        ));
    }
    Ok(texts.into_iter().map(|t| (t, None, Split::Test)).collect())
}

fn sample(ctx: &Ctx, flags: &[String], flag_file: Option<&Path>) -> Result<(), Failure> {
    let run = ctx.run();
    let seed = run.seed()?;
    let s = &run.sample;
    if s.count == 0 {
        return Err(Failure::Config("sample.count must be at least 1".into()));
    }
    let prompts: Vec<_> = collect_prompts(ctx, flags, flag_file)?
        .into_iter()
        .flat_map(|p| std::iter::repeat_n(p, s.count))
        .collect();
    let ae = load_vae(ctx)?;
    let model = load_tmdit(ctx)?;
    let sched = run.schedule()?;
    let gen_cfg: GenerationConfig = s.generation();
    let generator = Generator::new(&ae, &model, &sched, &gen_cfg)?;
    let texts: Vec<String> = prompts.iter().map(|p| p.0.clone()).collect();
    let tokens = generator.tokenize(&texts)?;
    ctx.prepare()?;
    let out = generator.generate(&tokens, seed)?;
    let records = out
        .motions
        .into_iter()
        .zip(prompts.into_iter().zip(tokens))
        .enumerate()
        .map(|(i, (motion, ((text, label, split), tokens)))| CorpusRecord {
            index: i,
            label,
            seed: seed.wrapping_add((i / gen_cfg.batch_size) as u64),
            text,
            tokens,
            split,
            motion,
        })
        .collect::<Vec<_>>();
    let n = records.len();
    let path = ctx.artifact("samples.bin");
    Corpus::from_records(records, model.vocab.clone(), None).write(&path)?;
    write(&ctx.artifact("trajectory.tsv"), trajectories_tsv(&out.trajectories).as_bytes())?;
    println!("wrote {n} motions to {}", path.display());
    Ok(())
}

fn features(records: &[&CorpusRecord]) -> Result<PoseFeatureSet, Failure> {
    Ok(PoseFeatureSet::from_motions(records.iter().map(|r| &r.motion))?)
}

fn labelled(records: &[&CorpusRecord]) -> Vec<(MotionSequence, MotionLabel)> {
    records
        .iter()
        .filter_map(|r| r.label.map(|l| (r.motion.clone(), l)))
        .collect()
}

fn of_program<'a>(records: &[&'a CorpusRecord], p: Program) -> Vec<&'a CorpusRecord> {
    records
        .iter()
        .copied()
        .filter(|r| r.label.map(|l| l.program()) == Some(p))
        .collect()
}

fn programs(records: &[&CorpusRecord]) -> BTreeSet<Program> {
    records.iter().filter_map(|r| r.label.map(|l| l.program())).collect()
}

fn eval(ctx: &Ctx) -> Result<(), Failure> {
    let run = ctx.run();
    let seed = run.seed()?;
    let corpus = read_corpus(ctx)?;
    let reference_split = corpus.split(run.eval.split);
    let generated;
    let (samples, reference): (Vec<&CorpusRecord>, Vec<&CorpusRecord>) = match &run.paths.samples {
        Some(p) => {
            generated = Corpus::read(p)?;
            (generated.records.iter().collect(), reference_split)
        }
        // Ground truth against itself: even positions versus odd positions.
        None => {
            let (even, odd): (Vec<_>, Vec<_>) = reference_split.iter().enumerate().partition(|(i, _)| i % 2 == 0);
            (even.into_iter().map(|x| *x.1).collect(), odd.into_iter().map(|x| *x.1).collect())
        }
    };
    let mut report = format!("metric\tvalue\nsamples\t{}\nreference\t{}\n", samples.len(), reference.len());
    let fd = frechet_pose_distance(&features(&samples)?, &features(&reference)?)?;
    report += &format!("frechet\t{fd:.6e}\n");
    let div = diversity(&features(&samples)?, run.eval.diversity_pairs, seed)?;
    report += &format!("diversity\t{div:.6}\n");
    let rules = RuleSet::standard();
    let all = labelled(&samples);
    if !all.is_empty() {
        report += &format!("accuracy\t{:.6}\n", rules.accuracy(&all)?);
    }
    let mut matrix = String::from("sample_label\treference_label\tfrechet\n");
    for p in programs(&samples) {
        let mine = of_program(&samples, p);
        report += &format!("accuracy.{p}\t{:.6}\n", rules.accuracy(&labelled(&mine))?);
        if mine.len() < 2 {
            continue;
        }
        for q in programs(&reference) {
            let theirs = of_program(&reference, q);
            if theirs.len() >= 2 {
                let d = frechet_pose_distance(&features(&mine)?, &features(&theirs)?)?;
                matrix += &format!("{p}\t{q}\t{d:.6e}\n");
            }
        }
    }
    ctx.prepare()?;
    write(&ctx.artifact("eval.tsv"), report.as_bytes())?;
    write(&ctx.artifact("frechet_by_label.tsv"), matrix.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn diagnose(ctx: &Ctx) -> Result<(), Failure> {
    let run = ctx.run();
    let seed = run.seed()?;
    let d = &run.diagnose;
    let sched = run.schedule()?;
    let sampler = GenerationConfig {
        steps_per_stage: d.steps_per_stage.clone(),
        guidance: run.sample.guidance,
        frames: 4 * d.frames,
        batch_size: 1,
    }
    .sampler(&sched)?;
    // A trained model when one is configured, otherwise a seeded untrained
    // network: the diagnostic only needs some velocity field.
    let model = match &run.paths.tmdit {
        Some(_) => load_tmdit(ctx)?,
        None => {
            let vocab = Vocabulary::standard();
            let tm = TmditConfig {
                latent_frames: d.frames.max(1),
                ..tmdit_config(run, &vocab)?
            };
            let width = tm.latent_joints * tm.latent_dim;
            TextMotionModel::new(&tm, vocab, Normalizer::identity(width), seed, DType::F32)?
        }
    };
    let tokens = model.vocab.tokenize(&d.prompt)?;
    let vfn = model.velocity_field(vec![tokens])?;
    let tail = [model.config().latent_joints, model.config().latent_dim];
    let seeds: Vec<u64> = (0..d.seeds as u64).map(|i| splitmix64(seed.wrapping_add(i))).collect();
    let report = noise_consistency_diagnostic(&vfn, &sampler, d.frames, &tail, &seeds)?;
    ctx.prepare()?;
    write(&ctx.artifact("diagnostic.tsv"), report.to_text().as_bytes())?;
    println!(
        "exact transition: deviation {:.3e}, {} draws after init, bitwise repeatable: {}",
        report.exact_transition_gap,
        report.exact_draws,
        report.exact_bitwise_repeatable()
    );
    println!("fresh-noise transition: deviation {:.3e}", report.naive_transition_gap);
    println!("cross-rule discrepancy: {:.3e}", report.cross_rule_gap);
    if report.exact_draws != 0 || !report.exact_bitwise_repeatable() {
        return Err(Failure::Runtime("the exact transition drew noise or was not repeatable".into()));
    }
    Ok(())
}

fn retention(ctx: &Ctx) -> Result<(), Failure> {
    let run = ctx.run();
    let corpus = read_corpus(ctx)?;
    let samples = labelled(&corpus.split(run.retention.split));
    let rows = retention_study(&samples, &run.retention.ratios, &RuleSet::standard())?;
    let table = retention_table(&rows);
    ctx.prepare()?;
    write(&ctx.artifact("retention.tsv"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Stage table `k, r_k, t_{k-1}, t_k, length`; stages are numbered from 1.
pub fn schedule_table(run: &RunConfig) -> Result<String, Failure> {
    let sched = run.schedule()?;
    let frames = run.inspect.frames;
    let mut s = String::from("k\tscale\tt_start\tt_end\tframes\n");
    for k in 0..sched.stages() {
        let (lo, hi) = sched.interval(k);
        s += &format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            k + 1,
            sched.scale(k),
            lo,
            hi,
            sched.stage_length(k, frames)?
        );
    }
    Ok(s)
}

fn inspect_schedule(ctx: &Ctx) -> Result<(), Failure> {
    let table = schedule_table(ctx.run())?;
    if ctx.explicit_out {
        ctx.prepare()?;
        write(&ctx.artifact("schedule.tsv"), table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}
