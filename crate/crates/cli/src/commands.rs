use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use handgm::clustering::{kmeans_run, purity, ClusterModel, DEFAULT_MAX_ITERS};
use handgm::dataset::{Annotation, PredictionRecord, Sample};
use handgm::eval::{pck, PckConfig, PckReport};
use handgm::io::{self, ANNOTATIONS_FILE};
use handgm::learning::{train_gm, TrainConfig};
use handgm::pipeline::{
    canonical_feature, canonical_pose, infer_all, unary_baseline, InferenceSetup, OracleAngles, StoredUnaries,
    WeightSource,
};
use handgm::pool::{init_empirical_pool, init_uniform_pool, ModelPool};
use handgm::skeleton::SkeletonTree;
use handgm::synth::{generate_dataset, SynthConfig};

use crate::config::Settings;
use crate::files::{write_atomic, write_dataset};
use crate::{Baseline, ClusterArgs, EvalArgs, InferArgs, InitArgs, SynthArgs, TrainArgs, WeightChoice};

// keys that belong to the command line rather than the generator
const CLI_KEYS: &[&str] = &[
    "out", "data", "clusters", "radius", "pool", "lr", "epochs", "batch_size", "target_sigma", "tied", "serial",
    "history", "weights", "angle_noise", "pred", "truth", "baseline", "thresholds", "max_iters", "uniform",
];

pub fn synth(args: SynthArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config, "synth")?;
    let out: PathBuf = settings.require(args.out, "out")?;
    let mut cfg: SynthConfig = toml::Value::Table(settings.without(CLI_KEYS))
        .try_into()
        .context("invalid generator settings in config")?;
    if let Some(n) = args.num_samples {
        cfg.num_samples = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let samples = generate_dataset(&cfg)?;
    write_dataset(&out, &samples)?;
    write_atomic(&out.join("synth.toml"), toml::to_string(&cfg)?.as_bytes())?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let samples = io::read_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let tree = SkeletonTree::hand();
    if let Some(s) = samples.first() {
        ensure!(
            s.unaries.len() == tree.len(),
            "dataset {} has {} heatmap layers per sample, the hand skeleton needs {}",
            dir.display(),
            s.unaries.len(),
            tree.len()
        );
    }
    Ok(samples)
}

fn angles(settings: &Settings, flag: Option<f64>, seed: Option<u64>) -> Result<OracleAngles> {
    Ok(OracleAngles {
        sigma_deg: settings.pick(flag, "angle_noise", 0.0)?,
        seed: settings.pick(seed, "seed", 0)?,
    })
}

fn canonical_features(samples: &[Sample], angles: &OracleAngles, tree: &SkeletonTree) -> Result<Vec<handgm::clustering::PoseFeature>> {
    use handgm::pipeline::AngleProvider;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(canonical_feature(&s.grid_pose(), angles.angle(i, s)?, s.dims(), tree)?))
        .collect()
}

pub fn cluster(args: ClusterArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config, "cluster")?;
    let data: PathBuf = settings.require(args.data, "data")?;
    let l: usize = settings.require(args.clusters, "clusters")?;
    let out: PathBuf = settings.require(args.out, "out")?;
    let seed = settings.pick(args.seed, "seed", 0)?;
    let max_iters = settings.pick(args.max_iters, "max_iters", DEFAULT_MAX_ITERS)?;
    let tree = SkeletonTree::hand();
    let samples = load_samples(&data)?;
    let features = canonical_features(&samples, &angles(&settings, args.angle_noise, Some(seed))?, &tree)?;
    let run = kmeans_run(&features, l, seed, max_iters)?;
    if !run.converged {
        log::warn!("k-means stopped after {max_iters} iterations without converging");
    }
    write_atomic(&out, &io::encode_clusters(&run.model)?)?;
    println!(
        "{} clusters over {} poses, distortion {:.4}, temperature {:.4}",
        l,
        samples.len(),
        run.distortion.last().copied().unwrap_or(0.0),
        run.model.tau()
    );
    let labels: Option<Vec<usize>> = samples.iter().map(|s| s.prototype).collect();
    if let Some(labels) = labels {
        println!("purity against prototype labels: {:.4}", purity(&run.assignments, &labels));
    }
    Ok(())
}

fn load_clusters(path: &Path) -> Result<ClusterModel> {
    let model = io::read_clusters(path)?;
    let tree = SkeletonTree::hand();
    ensure!(
        model.dim() == 2 * tree.edges().len(),
        "{} holds {}-dimensional centroids; hand pose features have {}",
        path.display(),
        model.dim(),
        2 * tree.edges().len()
    );
    Ok(model)
}

fn check_pool(pool: &ModelPool, clusters: &ClusterModel, samples: &[Sample], pool_path: &Path) -> Result<()> {
    ensure!(
        pool.len() == 1 || pool.len() == clusters.len(),
        "{} has {} models but the cluster model has {} clusters",
        pool_path.display(),
        pool.len(),
        clusters.len()
    );
    if let Some(s) = samples.first() {
        let (h, w) = s.dims();
        ensure!(
            pool.radius() < h.max(w),
            "{} has kernel radius {} but the heatmaps are only {h}x{w}",
            pool_path.display(),
            pool.radius()
        );
    }
    Ok(())
}

pub fn init(args: InitArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config, "init")?;
    let data: PathBuf = settings.require(args.data, "data")?;
    let clusters_path: PathBuf = settings.require(args.clusters, "clusters")?;
    let radius: usize = settings.require(args.radius, "radius")?;
    let out: PathBuf = settings.require(args.out, "out")?;
    let uniform = args.uniform || settings.pick(None, "uniform", false)?;
    let tree = SkeletonTree::hand();
    let samples = load_samples(&data)?;
    let clusters = load_clusters(&clusters_path)?;
    if let Some(s) = samples.first() {
        let (h, w) = s.dims();
        ensure!(radius >= 1 && radius < h.max(w), "radius must lie in 1..{} for {h}x{w} heatmaps", h.max(w));
    }
    let pool = if uniform {
        init_uniform_pool(&tree, clusters.len(), radius)?
    } else {
        let angles = angles(&settings, args.angle_noise, None)?;
        let features = canonical_features(&samples, &angles, &tree)?;
        let mut labelled = Vec::with_capacity(samples.len());
        for (i, (s, f)) in samples.iter().zip(&features).enumerate() {
            use handgm::pipeline::AngleProvider;
            let pose = canonical_pose(&s.grid_pose(), angles.angle(i, s)?, s.dims());
            labelled.push((pose, clusters.assign(f)?));
        }
        init_empirical_pool(&tree, &labelled, clusters.len(), radius)?
    };
    write_atomic(&out, &io::encode_pool(&pool)?)?;
    println!("pool of {} models, radius {radius}, written to {}", pool.len(), out.display());
    Ok(())
}

pub fn train(args: TrainArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config, "train")?;
    let data: PathBuf = settings.require(args.data, "data")?;
    let pool_path: PathBuf = settings.require(args.pool, "pool")?;
    let clusters_path: PathBuf = settings.require(args.clusters, "clusters")?;
    let out: PathBuf = settings.require(args.out, "out")?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: settings.pick(args.lr, "lr", defaults.learning_rate)?,
        epochs: settings.pick(args.epochs, "epochs", defaults.epochs)?,
        batch_size: settings.pick(args.batch_size, "batch_size", defaults.batch_size)?,
        seed: settings.pick(args.seed, "seed", defaults.seed)?,
        target_sigma: settings.pick(args.target_sigma, "target_sigma", defaults.target_sigma)?,
        tied: args.tied || settings.pick(None, "tied", false)?,
        parallel: !(args.serial || settings.pick(None, "serial", false)?),
        ..defaults
    };
    let tree = SkeletonTree::hand();
    let samples = load_samples(&data)?;
    let clusters = load_clusters(&clusters_path)?;
    let pool = io::read_pool(&pool_path, &tree)?;
    check_pool(&pool, &clusters, &samples, &pool_path)?;
    let angles = angles(&settings, args.angle_noise, Some(cfg.seed))?;
    let outcome = train_gm(&pool, &clusters, &samples, &angles, &StoredUnaries, &tree, &cfg)?;
    write_atomic(&out, &io::encode_pool(&outcome.pool)?)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in outcome.history.iter().enumerate() {
        csv.push_str(&format!("{},{l:.9e}\n", e + 1));
    }
    let history = settings.pick(args.history, "history", out.with_extension("loss.csv"))?;
    write_atomic(&history, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

pub fn infer(args: InferArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config, "infer")?;
    let data: PathBuf = settings.require(args.data, "data")?;
    let pool_path: PathBuf = settings.require(args.pool, "pool")?;
    let clusters_path: PathBuf = settings.require(args.clusters, "clusters")?;
    let out: PathBuf = settings.require(args.out, "out")?;
    let weights = match settings.pick(args.weights, "weights", WeightChoice::Refined)? {
        WeightChoice::Refined => WeightSource::Refined,
        WeightChoice::UnaryArgmax => WeightSource::UnaryArgmax,
        WeightChoice::GroundTruth => WeightSource::GroundTruth,
        WeightChoice::Uniform => WeightSource::Uniform,
    };
    let parallel = !(args.serial || settings.pick(None, "serial", false)?);
    let tree = SkeletonTree::hand();
    let samples = load_samples(&data)?;
    let clusters = load_clusters(&clusters_path)?;
    let pool = io::read_pool(&pool_path, &tree)?;
    check_pool(&pool, &clusters, &samples, &pool_path)?;
    let angles = angles(&settings, args.angle_noise, args.seed)?;
    let setup = InferenceSetup {
        pool: &pool,
        clusters: &clusters,
        angles: &angles,
        unaries: &StoredUnaries,
        weights,
        tree: &tree,
    };
    let inferred = infer_all(&setup, &samples, parallel)?;
    let records: Vec<PredictionRecord> = inferred.iter().zip(&samples).map(|(p, s)| p.record(s)).collect();
    write_atomic(&out, io::encode_jsonl(&records)?.as_bytes())?;
    println!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

fn side_by_side(reports: &[(&str, &PckReport)]) -> String {
    let mut out = format!("{:>8}", "sigma");
    for (name, _) in reports {
        out.push_str(&format!("  {name:>12}"));
    }
    out.push('\n');
    for (i, t) in reports[0].1.thresholds.iter().enumerate() {
        out.push_str(&format!("{t:>8.2}"));
        for (_, r) in reports {
            out.push_str(&format!("  {:>12.2}", 100.0 * r.pck[i]));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:>8}", "mPCK"));
    for (_, r) in reports {
        out.push_str(&format!("  {:>12.2}", 100.0 * r.mpck));
    }
    out.push('\n');
    out
}

pub fn eval(args: EvalArgs, config: Option<&Path>) -> Result<()> {
    let settings = Settings::load(config, "eval")?;
    let pred: PathBuf = settings.require(args.pred, "pred")?;
    let truth: PathBuf = settings.require(args.truth, "truth")?;
    let baseline: Option<Baseline> = match args.baseline {
        Some(b) => Some(b),
        None => settings.get("baseline")?,
    };
    let cfg = match settings.pick(args.thresholds, "thresholds", Vec::new())? {
        t if t.is_empty() => PckConfig::default(),
        t => PckConfig::new(t)?,
    };

    let predictions: Vec<PredictionRecord> = io::read_jsonl(&pred)?;
    let annotations: Vec<Annotation> = io::read_jsonl(&truth.join(ANNOTATIONS_FILE))?;
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in &predictions {
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            bail!("{} lists sample {} twice", pred.display(), p.sample_id);
        }
    }
    let mut poses = Vec::with_capacity(annotations.len());
    for a in &annotations {
        let p = by_id
            .remove(a.sample_id.as_str())
            .with_context(|| format!("{} has no prediction for sample {}", pred.display(), a.sample_id))?;
        ensure!(
            p.keypoints.len() == a.keypoints.len(),
            "sample {}: {} predicted keypoints, {} annotated",
            a.sample_id,
            p.keypoints.len(),
            a.keypoints.len()
        );
        poses.push(p.pose());
    }
    if let Some(extra) = by_id.keys().next() {
        bail!("prediction for unknown sample {extra}");
    }
    let truths: Vec<_> = annotations.iter().map(Annotation::pose).collect();
    let boxes: Vec<_> = annotations.iter().map(|a| a.hand_box).collect();
    let model = pck(&poses, &truths, &boxes, &cfg)?;

    let mut record = serde_json::json!({ "samples": model.samples, "model": model });
    match baseline {
        None => print!("{}", side_by_side(&[("model", &model)])),
        Some(Baseline::UnaryArgmax) => {
            let samples = load_samples(&truth)?;
            let base = pck(&unary_baseline(&samples, &StoredUnaries)?, &truths, &boxes, &cfg)?;
            print!("{}", side_by_side(&[("model", &model), ("unary-argmax", &base)]));
            record["unary_argmax"] = serde_json::to_value(&base)?;
        }
    }
    println!("{record}");
    Ok(())
}
