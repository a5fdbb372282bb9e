use std::fmt::Debug;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::table::{numbered, Table};
use super::{
    Cli, Command, GenDataArgs, GenerateArgs, PendulumCommand, PendulumEvalArgs, PendulumTrainArgs, RandvizArgs,
    SynthArgs, TextureCommand, TextureTrainArgs,
};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::latent::{
    fit_latent, generate_texture, synth_dataset, FramePairs, FrameSequence, LatentModel, LatentTrainConfig, SynthConfig,
};
use crate::pendulum::{gen_dataset, DatasetMeta, PendulumParams, StatePairs};
use crate::stable::{StableDynamicsModel, StableModelSpec};
use crate::train::{eval_rollout_error, fit_with, DynamicsModel, EvalConfig, ModelKind, TrainConfig};

/// Largest `∇Vᵀf + αV` tolerated in a grid export.
const GRID_MARGIN_TOL: f64 = 1e-9;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Randviz(a) => randviz(&a),
        Command::Pendulum(PendulumCommand::GenData(a)) => pendulum_gen_data(&a),
        Command::Pendulum(PendulumCommand::Train(a)) => pendulum_train(&a),
        Command::Pendulum(PendulumCommand::Eval(a)) => pendulum_eval(&a),
        Command::Texture(TextureCommand::Synth(a)) => texture_synth(&a),
        Command::Texture(TextureCommand::Train(a)) => texture_train(&a),
        Command::Texture(TextureCommand::Generate(a)) => texture_generate(&a),
    }
}

fn headed(command: &str, flags: &impl Debug, columns: Vec<String>) -> Table {
    Table::new(columns)
        .with_meta("command", command)
        .with_meta("flags", format!("{flags:?}"))
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn history_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.with_extension("loss.csv"))
}

fn randviz(a: &RandvizArgs) -> Result<()> {
    if a.resolution < 2 {
        return Err(Error::contract("resolution must be at least 2"));
    }
    if !(a.bound > 0.0 && a.bound.is_finite()) {
        return Err(Error::contract("grid bound must be positive"));
    }
    let spec = StableModelSpec {
        state_dim: 2,
        fhat_hidden: a.fhat_hidden.clone(),
        icnn_hidden: a.icnn_hidden.clone(),
        alpha: a.stability.alpha,
        epsilon: a.stability.epsilon,
        smooth_d: a.stability.smooth_d,
    };
    let model = StableDynamicsModel::random(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let step = 2.0 * a.bound / (a.resolution - 1) as f64;
    let mut points = Vec::with_capacity(a.resolution * a.resolution);
    for i in 0..a.resolution {
        for j in 0..a.resolution {
            points.push([-a.bound + i as f64 * step, -a.bound + j as f64 * step]);
        }
    }
    let xs = Tensor::from_rows(&points)?;
    let d = model.diagnostics_batch(&xs)?;
    let margins = model.decrease_margin(&xs)?;
    if let Some((k, m)) = margins.iter().enumerate().find(|(_, m)| !(**m <= GRID_MARGIN_TOL)) {
        return Err(Error::Numeric(format!(
            "decrease condition violated at {:?}: margin {m}",
            points[k]
        )));
    }
    let mut t = headed("randviz", a, cols(&["x1", "x2", "fhat1", "fhat2", "f1", "f2", "V"]));
    for (k, p) in points.iter().enumerate() {
        let fh = d.fhat.row_slice(k);
        let f = d.f.row_slice(k);
        t.push(vec![p[0], p[1], fh[0], fh[1], f[0], f[1], d.value.as_slice()[k]])?;
    }
    t.save(&a.out)
}

pub fn save_dataset(data: &StatePairs, links: usize, damping: f64, flags: &impl Debug, path: &Path) -> Result<()> {
    let n = data.state_dim();
    let mut columns = numbered("x", n);
    columns.extend(numbered("xdot", n));
    let mut t = headed("pendulum gen-data", flags, columns)
        .with_meta("links", links)
        .with_meta("damping", damping)
        .with_meta("seed", data.meta.seed)
        .with_meta("theta_range", data.meta.theta_range)
        .with_meta("omega_range", data.meta.omega_range);
    for r in 0..data.len() {
        let mut row = data.states.row_slice(r).to_vec();
        row.extend_from_slice(data.derivs.row_slice(r));
        t.push(row)?;
    }
    t.save(path)
}

/// Dataset plus the `(links, damping)` of the pendulum that produced it.
pub fn load_dataset(path: &Path) -> Result<(StatePairs, usize, f64)> {
    let t = Table::load(path)?;
    let links: usize = t.meta_parse("links")?;
    let damping: f64 = t.meta_parse("damping")?;
    let n = 2 * links;
    let mut expect = numbered("x", n);
    expect.extend(numbered("xdot", n));
    if t.columns != expect {
        return Err(Error::Schema(format!(
            "{}: expected columns {}",
            path.display(),
            expect.join(",")
        )));
    }
    if t.rows.is_empty() {
        return Err(Error::contract(format!("{}: dataset is empty", path.display())));
    }
    let states: Vec<&[f64]> = t.rows.iter().map(|r| &r[..n]).collect();
    let derivs: Vec<&[f64]> = t.rows.iter().map(|r| &r[n..]).collect();
    let meta = DatasetMeta {
        seed: t.meta_parse("seed")?,
        theta_range: t.meta_parse("theta_range")?,
        omega_range: t.meta_parse("omega_range")?,
    };
    let pairs = StatePairs::new(Tensor::from_rows(&states)?, Tensor::from_rows(&derivs)?, meta)?;
    Ok((pairs, links, damping))
}

fn pendulum_gen_data(a: &GenDataArgs) -> Result<()> {
    let params = PendulumParams::uniform(a.links, a.damping)?;
    let data = gen_dataset(&params, a.count, a.theta_range, a.omega_range, a.seed)?;
    save_dataset(&data, a.links, a.damping, a, &a.out)
}

fn put_train_config(ck: &mut Checkpoint, cfg: &TrainConfig) {
    ck.set("kind", cfg.kind)
        .set_list("fhat_hidden", &cfg.fhat_hidden)
        .set_list("icnn_hidden", &cfg.icnn_hidden)
        .set("alpha", cfg.alpha)
        .set("epsilon", cfg.epsilon)
        .set("smooth_d", cfg.smooth_d)
        .set("lr", cfg.lr)
        .set("batch_size", cfg.batch_size)
        .set("epochs", cfg.epochs)
        .set("seed", cfg.seed);
}

fn get_train_config(ck: &Checkpoint) -> Result<TrainConfig> {
    Ok(TrainConfig {
        kind: ck.get("kind")?,
        fhat_hidden: ck.get_list("fhat_hidden")?,
        icnn_hidden: ck.get_list("icnn_hidden")?,
        alpha: ck.get("alpha")?,
        epsilon: ck.get("epsilon")?,
        smooth_d: ck.get("smooth_d")?,
        lr: ck.get("lr")?,
        batch_size: ck.get("batch_size")?,
        epochs: ck.get("epochs")?,
        seed: ck.get("seed")?,
    })
}

fn expect_model(ck: &Checkpoint, model: &str) -> Result<()> {
    let found: String = ck.get("model")?;
    if found != model {
        return Err(Error::Schema(format!("expected a {model} checkpoint, found {found}")));
    }
    Ok(())
}

/// Checkpoint of a vector-field model with its training settings.
pub fn dynamics_checkpoint(model: &DynamicsModel, cfg: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::from_params(model);
    ck.set("model", "dynamics").set("state_dim", model.state_dim());
    put_train_config(&mut ck, cfg);
    ck
}

pub fn load_dynamics(ck: &Checkpoint) -> Result<(DynamicsModel, TrainConfig)> {
    expect_model(ck, "dynamics")?;
    let cfg = get_train_config(ck)?;
    let mut model = cfg.init_model(ck.get("state_dim")?, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.restore_into(&mut model)?;
    Ok((model, cfg))
}

fn pendulum_train(a: &PendulumTrainArgs) -> Result<()> {
    let (data, links, damping) = load_dataset(&a.data)?;
    let cfg = TrainConfig {
        kind: a.model.parse()?,
        fhat_hidden: a.fhat_hidden.clone(),
        icnn_hidden: a.icnn_hidden.clone(),
        alpha: a.stability.alpha,
        epsilon: a.stability.epsilon,
        smooth_d: a.stability.smooth_d,
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    };
    let every = (a.epochs / 10).max(1);
    let out = fit_with(&cfg, &data, |e, _, loss| {
        if (e + 1) % every == 0 {
            eprintln!("epoch {:>4}  loss {loss:.6e}", e + 1);
        }
    })?;
    let mut ck = dynamics_checkpoint(&out.model, &cfg);
    ck.set("links", links)
        .set("damping", damping)
        .set("epochs_completed", out.history.len())
        .set("final_loss", out.history.last().copied().unwrap_or(f64::NAN));
    if let Some(e) = out.aborted_at_epoch {
        ck.set("aborted_at_epoch", e);
    }
    ck.save(&a.out)?;

    let mut hist = headed("pendulum train", a, cols(&["epoch", "loss"]));
    for (e, l) in out.history.iter().enumerate() {
        hist.push(vec![(e + 1) as f64, *l])?;
    }
    hist.save(&history_path(&a.out, &a.history))
}

fn pendulum_eval(a: &PendulumEvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, _) = load_dynamics(&ck)?;
    let links: usize = ck.get("links")?;
    let damping = match a.damping {
        Some(d) => d,
        None => ck.get("damping")?,
    };
    let truth = PendulumParams::uniform(links, damping)?;
    let cfg = EvalConfig {
        horizon: a.horizon,
        ensemble: a.ensemble,
        dt: a.dt,
        seed: a.seed,
        ..EvalConfig::default()
    };
    let series = eval_rollout_error(&model, &truth, &cfg)?;
    let finite_max = series
        .max_norm
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let diverged = series.divergence_step.iter().filter(|s| s.is_some()).count();
    let mut t = headed("pendulum eval", a, cols(&["t", "mean_error", "diverged_count"]))
        .with_meta("kind", model.kind())
        .with_meta("diverged_rollouts", diverged)
        .with_meta("max_finite_norm", finite_max);
    for k in 0..series.horizon() {
        t.push(vec![
            series.time(k),
            series.mean_error[k],
            series.diverged_count[k] as f64,
        ])?;
    }
    t.save(&a.out)
}

pub fn save_frames(seqs: &[FrameSequence], flags: &impl Debug, path: &Path) -> Result<()> {
    let first = seqs.first().ok_or_else(|| Error::contract("no sequences to save"))?;
    let mut columns = cols(&["seq", "t", "cx", "cy"]);
    columns.extend(numbered("p", first.pixels()));
    let mut t = headed("texture synth", flags, columns)
        .with_meta("width", first.width)
        .with_meta("height", first.height);
    for (s, seq) in seqs.iter().enumerate() {
        for k in 0..seq.len() {
            let [cx, cy] = seq.centers.get(k).copied().unwrap_or([f64::NAN, f64::NAN]);
            let mut row = vec![s as f64, k as f64, cx, cy];
            row.extend_from_slice(seq.frame(k));
            t.push(row)?;
        }
    }
    t.save(path)
}

pub fn load_frames(path: &Path) -> Result<Vec<FrameSequence>> {
    let t = Table::load(path)?;
    let width: usize = t.meta_parse("width")?;
    let height: usize = t.meta_parse("height")?;
    let mut expect = cols(&["seq", "t", "cx", "cy"]);
    expect.extend(numbered("p", width * height));
    if t.columns != expect {
        return Err(Error::Schema(format!("{}: unexpected frame columns", path.display())));
    }
    type Group = (f64, Vec<Vec<f64>>, Vec<[f64; 2]>);
    let mut groups: Vec<Group> = Vec::new();
    for row in &t.rows {
        if groups.last().is_none_or(|g| g.0 != row[0]) {
            groups.push((row[0], Vec::new(), Vec::new()));
        }
        let g = groups.last_mut().expect("just pushed");
        g.1.push(row[4..].to_vec());
        g.2.push([row[2], row[3]]);
    }
    if groups.is_empty() {
        return Err(Error::contract(format!("{}: no frames", path.display())));
    }
    groups
        .into_iter()
        .map(|(_, frames, centers)| {
            let known = centers.iter().all(|c| c[0].is_finite() && c[1].is_finite());
            FrameSequence::new(
                Tensor::from_rows(&frames)?,
                width,
                height,
                if known { centers } else { Vec::new() },
            )
        })
        .collect()
}

fn texture_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        size: a.size,
        omega: [a.omega_x, a.omega_y],
        zeta: a.zeta,
        sigma: a.sigma,
        max_offset: a.max_offset,
        max_speed: a.max_speed,
        seed: a.seed,
    };
    let seqs = synth_dataset(&cfg, a.count, a.length)?;
    save_frames(&seqs, a, &a.out)
}

/// Checkpoint of a latent model with its training settings.
pub fn latent_checkpoint(model: &LatentModel, cfg: &LatentTrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::from_params(model);
    ck.set("model", "latent")
        .set("width", model.vae.width)
        .set("height", model.vae.height)
        .set("latent_dim", cfg.latent_dim)
        .set_list("vae_hidden", &cfg.vae_hidden)
        .set("step", cfg.step);
    put_train_config(&mut ck, &cfg.dynamics_config());
    ck
}

pub fn load_latent(ck: &Checkpoint) -> Result<(LatentModel, LatentTrainConfig)> {
    expect_model(ck, "latent")?;
    let d = get_train_config(ck)?;
    let cfg = LatentTrainConfig {
        kind: d.kind,
        latent_dim: ck.get("latent_dim")?,
        vae_hidden: ck.get_list("vae_hidden")?,
        fhat_hidden: d.fhat_hidden,
        icnn_hidden: d.icnn_hidden,
        alpha: d.alpha,
        epsilon: d.epsilon,
        smooth_d: d.smooth_d,
        lr: d.lr,
        batch_size: d.batch_size,
        epochs: d.epochs,
        step: ck.get("step")?,
        seed: d.seed,
    };
    let mut model = cfg.init_model(ck.get("width")?, ck.get("height")?, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.restore_into(&mut model)?;
    Ok((model, cfg))
}

fn texture_train(a: &TextureTrainArgs) -> Result<()> {
    let seqs = load_frames(&a.data)?;
    let pairs = FramePairs::from_sequences(&seqs)?;
    let cfg = LatentTrainConfig {
        kind: if a.naive { ModelKind::Naive } else { ModelKind::Stable },
        latent_dim: a.latent_dim,
        vae_hidden: a.vae_hidden.clone(),
        fhat_hidden: a.fhat_hidden.clone(),
        icnn_hidden: a.icnn_hidden.clone(),
        alpha: a.stability.alpha,
        epsilon: a.stability.epsilon,
        smooth_d: a.stability.smooth_d,
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        step: a.step,
        seed: a.seed,
    };
    let every = (a.epochs / 10).max(1);
    let out = fit_latent(&cfg, &pairs, |e, loss| {
        if (e + 1) % every == 0 {
            eprintln!("epoch {:>4}  loss {loss:.6e}", e + 1);
        }
    })?;
    let mut ck = latent_checkpoint(&out.model, &cfg);
    ck.set("epochs_completed", out.history.len())
        .set("initial_loss", out.initial_loss)
        .set("final_loss", out.final_loss);
    if let Some(e) = out.aborted_at_epoch {
        ck.set("aborted_at_epoch", e);
    }
    ck.save(&a.out)?;

    let mut hist = headed("texture train", a, cols(&["epoch", "loss"]))
        .with_meta("initial_loss", out.initial_loss)
        .with_meta("final_loss", out.final_loss);
    for (e, l) in out.history.iter().enumerate() {
        hist.push(vec![(e + 1) as f64, *l])?;
    }
    hist.save(&history_path(&a.out, &a.history))
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    let mut text = format!("P2\n{width} {height}\n255\n");
    for r in 0..height {
        let row: Vec<String> = pixels[r * width..(r + 1) * width]
            .iter()
            .map(|p| ((p.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn texture_generate(a: &GenerateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, cfg) = load_latent(&ck)?;
    let seqs = load_frames(&a.data)?;
    let seq = seqs
        .get(a.sequence)
        .ok_or_else(|| Error::contract(format!("sequence {} not in {} sequences", a.sequence, seqs.len())))?;
    if a.frame >= seq.len() {
        return Err(Error::contract(format!(
            "frame {} not in a {}-frame sequence",
            a.frame,
            seq.len()
        )));
    }
    let step = a.step.unwrap_or(cfg.step);
    let tex = generate_texture(&model, seq.frame(a.frame), a.steps, step)?;

    let n = model.vae.latent_dim();
    let mut columns = cols(&["t", "norm"]);
    columns.extend(numbered("z", n));
    let mut t = headed("texture generate", a, columns)
        .with_meta("kind", model.dynamics.kind())
        .with_meta("diverged", tex.diverged_at.is_some())
        .with_meta(
            "diverged_at",
            tex.diverged_at.map_or("none".to_string(), |s| s.to_string()),
        )
        .with_meta("max_norm", tex.max_norm());
    if let Some(m) = model.dynamics.as_stable() {
        let z0 = tex.norms[0];
        let m_hat = m
            .lyap
            .estimate_quadratic_bound(z0.max(1e-12), 256, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
        t = t
            .with_meta("m_hat", m_hat)
            .with_meta("norm_bound", (m_hat / cfg.epsilon).sqrt() * z0);
    }
    for k in 0..tex.latents.rows() {
        let mut row = vec![k as f64, tex.norms[k]];
        row.extend_from_slice(tex.latents.row_slice(k));
        t.push(row)?;
    }
    t.save(&a.out)?;

    if let Some(path) = &a.frames {
        let mut f = headed("texture generate", a, {
            let mut c = cols(&["t"]);
            c.extend(numbered("p", model.vae.pixels()));
            c
        })
        .with_meta("width", model.vae.width)
        .with_meta("height", model.vae.height);
        for k in 0..tex.frames.len() {
            let mut row = vec![k as f64];
            row.extend_from_slice(tex.frames.frame(k));
            f.push(row)?;
        }
        f.save(path)?;
    }
    if let Some(dir) = &a.pgm_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for k in 0..tex.frames.len() {
            write_pgm(
                &dir.join(format!("frame_{k:04}.pgm")),
                model.vae.width,
                model.vae.height,
                tex.frames.frame(k),
            )?;
        }
    }
    Ok(())
}
