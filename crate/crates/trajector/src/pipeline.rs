//! End-to-end orchestration: dataset synthesis, feature extraction with the
//! 8:1:1 split, two-stream training, fused evaluation, and single-track
//! prediction. Every step echoes the effective configuration into its output
//! directory so artifacts are reproducible from disk alone.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{roc_auc, write_report, EvalReport, ReportFormat};
use crate::face3d;
use crate::features::{
    build_sequences, read_feature_csv, write_feature_csv, FeatureParams, FeatureSequence, Stream,
};
use crate::fusion::{decide, dempster_combine, mass_from_prob, MassFunction, DEFAULT_THRESHOLD};
use crate::ingest::{
    interpolate_gaps, parse_track, serialize_track, synth_track, Label, LandmarkTrack, SynthConfig,
    DEFAULT_MAX_GAP,
};
use crate::model::{
    self, load_checkpoint, save_checkpoint, train, EpochStats, ModelParams, Sample, TrainConfig,
    TransformerConfig,
};
use crate::par::{par_map_ordered, write_atomic};
use crate::phase::{delay_embed, relative_trajectory, DEFAULT_EMBED_DIM, DEFAULT_REC_RATE, DEFAULT_TAU};
use crate::rng::Rng;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Every tunable of the pipeline in one serializable bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub tau: usize,
    pub embed_dim: usize,
    pub rec_rate: f64,
    pub lambda: f64,
    pub max_step: Option<f64>,
    pub max_gap: usize,
    pub discount: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub split: [f64; 3],
    pub use_positional: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            tau: DEFAULT_TAU,
            embed_dim: DEFAULT_EMBED_DIM,
            rec_rate: DEFAULT_REC_RATE,
            lambda: face3d::DEFAULT_LAMBDA,
            max_step: None,
            max_gap: DEFAULT_MAX_GAP,
            discount: crate::fusion::DEFAULT_DISCOUNT,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            hidden: model::DEFAULT_HIDDEN_DIM,
            layers: model::DEFAULT_N_LAYERS,
            heads: model::DEFAULT_N_HEADS,
            max_len: model::DEFAULT_MAX_LEN,
            split: t.split,
            use_positional: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.tau < 1 || self.embed_dim < 1 {
            return Err(Error::invalid("tau and embed-dim must be at least 1"));
        }
        if !(self.rec_rate > 0.0 && self.rec_rate <= 1.0) {
            return Err(Error::invalid("rec-rate must lie in (0, 1]"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::invalid("discount must lie in [0, 1)"));
        }
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.max_len == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            lambda: self.lambda,
            max_step: self.max_step,
            ..FeatureParams::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            split: self.split,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn model_config(&self, stream: Stream) -> TransformerConfig {
        TransformerConfig {
            input_dim: self.embed_dim * stream.dim(),
            hidden_dim: self.hidden,
            n_layers: self.layers,
            n_heads: self.heads,
            ff_dim: 2 * self.hidden,
            max_len: self.max_len,
            // Distinct init streams for the two models.
            seed: match stream {
                Stream::Fe => self.seed,
                Stream::Hp => self.seed ^ 0x9E37_79B9_7F4A_7C15,
            },
            use_positional: self.use_positional,
        }
    }
}

/// Echo the effective configuration into an output directory.
pub fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    let path = dir.join("config.json");
    write_atomic(&path, text.as_bytes()).map_err(|e| Error::file(path, e))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::file(path, e))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub video_id: String,
    pub file: String,
    pub label: Option<u8>,
}

/// Write `n_per_class` real and fake synthetic tracks plus `manifest.csv`.
/// The template's seed field is ignored; per-track seeds come from the run
/// seed.
pub fn synth_dataset(
    out_dir: &Path,
    n_per_class: usize,
    template: &SynthConfig,
    cfg: &RunConfig,
) -> Result<Vec<ManifestRow>> {
    cfg.validate()?;
    template.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut seed_rng = Rng::seed_from(cfg.seed);
    let mut rows = Vec::with_capacity(2 * n_per_class);
    let mut jobs = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for label in [Label::Real, Label::Fake] {
            jobs.push((
                SynthConfig {
                    seed: seed_rng.next_u64(),
                    ..*template
                },
                label,
            ));
        }
    }
    let tracks = par_map_ordered(&jobs, |(sc, label)| synth_track(sc, *label));
    for track in tracks {
        let track = track?;
        let file = format!("{}.json", track.video_id);
        let path = out_dir.join(&file);
        write_atomic(&path, &serialize_track(&track)).map_err(|e| Error::file(path, e))?;
        rows.push(ManifestRow {
            video_id: track.video_id.clone(),
            file,
            label: track.label.map(Label::as_u8),
        });
    }
    write_manifest(&out_dir.join("manifest.csv"), &rows)?;
    write_config(out_dir, cfg)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["video_id", "file", "label"])?;
    for r in rows {
        w.write_record([
            r.video_id.as_str(),
            r.file.as_str(),
            &r.label.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(path, &bytes).map_err(|e| Error::file(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e))?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let label = match record.get(2).unwrap_or("") {
            "" => None,
            s => Some(
                s.parse::<u8>()
                    .map_err(|_| Error::invalid(format!("bad manifest label {s:?}")))?,
            ),
        };
        rows.push(ManifestRow {
            video_id: record
                .get(0)
                .ok_or_else(|| Error::invalid("manifest row missing video_id"))?
                .to_string(),
            file: record
                .get(1)
                .ok_or_else(|| Error::invalid("manifest row missing file"))?
                .to_string(),
            label,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Default)]
pub struct FeatureSummary {
    pub n_ok: usize,
    /// (file, error) for every track that failed to load or process.
    pub skipped: Vec<(String, String)>,
    pub split_counts: [usize; 3],
}

fn load_track(path: &Path, cfg: &RunConfig) -> Result<LandmarkTrack> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let track = parse_track(&bytes).map_err(|e| Error::file(path, e))?;
    Ok(interpolate_gaps(&track, cfg.max_gap).track)
}

/// 8:1:1-style split sizes: train and val round to nearest, test gets the
/// remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    [n_train, n_val, n - n_train - n_val]
}

/// Extract both feature streams for every manifest track, assign splits by a
/// seeded shuffle, and write per-split CSVs plus a `labels.csv` sidecar
/// (`video_id,label,split`). Corrupt tracks are skipped and reported.
pub fn extract_features(
    manifest_path: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<FeatureSummary> {
    cfg.validate()?;
    let rows = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;

    let model = face3d::ShapeModel::bundled();
    let params = cfg.feature_params();
    let results = par_map_ordered(&rows, |row| {
        let track = load_track(&base.join(&row.file), cfg)?;
        let (mut fe, mut hp) = build_sequences(&track, &model, &params)?;
        // The manifest is authoritative for labels and ids.
        let label = row.label.map(Label::from_u8).transpose()?;
        for seq in [&mut fe, &mut hp] {
            seq.video_id = row.video_id.clone();
            seq.label = label;
        }
        Ok::<_, Error>((fe, hp))
    });

    let mut ok = Vec::new();
    let mut summary = FeatureSummary::default();
    for (row, result) in rows.iter().zip(results) {
        match result {
            Ok(pair) => ok.push(pair),
            Err(e) => summary.skipped.push((row.file.clone(), e.to_string())),
        }
    }
    summary.n_ok = ok.len();

    let mut order: Vec<usize> = (0..ok.len()).collect();
    Rng::seed_from(cfg.seed).shuffle(&mut order);
    let sizes = split_sizes(ok.len(), cfg.split);
    summary.split_counts = sizes;

    let mut label_rows: Vec<(String, Option<Label>, &str)> = Vec::with_capacity(ok.len());
    let mut offset = 0;
    for (split_name, &size) in SPLIT_NAMES.iter().zip(&sizes) {
        let members = &order[offset..offset + size];
        offset += size;
        for stream in [Stream::Fe, Stream::Hp] {
            let seqs: Vec<FeatureSequence> = members
                .iter()
                .map(|&i| match stream {
                    Stream::Fe => ok[i].0.clone(),
                    Stream::Hp => ok[i].1.clone(),
                })
                .collect();
            let path = out_dir.join(format!("{split_name}_{}.csv", stream.tag().to_lowercase()));
            write_feature_csv(&path, &seqs)?;
        }
        for &i in members {
            label_rows.push((ok[i].0.video_id.clone(), ok[i].0.label, split_name));
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["video_id", "label", "split"])?;
    for (id, label, split) in &label_rows {
        w.write_record([
            id.as_str(),
            &label.map(|l| l.as_u8().to_string()).unwrap_or_default(),
            split,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    let labels_path = out_dir.join("labels.csv");
    write_atomic(&labels_path, &bytes).map_err(|e| Error::file(labels_path, e))?;
    write_config(out_dir, cfg)?;
    Ok(summary)
}

/// First-frame-relative trajectory → delay embedding → truncation to
/// `max_len` model states.
pub fn sequence_to_model_input(seq: &FeatureSequence, cfg: &RunConfig) -> Result<Array2<f64>> {
    let rel = relative_trajectory(seq)?;
    let emb = delay_embed(&rel, cfg.tau, cfg.embed_dim)?;
    let rows = emb.states.nrows().min(cfg.max_len);
    Ok(Array2::from_shape_fn(
        (rows, emb.states.ncols()),
        |(i, j)| emb.states[(i, j)],
    ))
}

fn read_labels(features_dir: &Path) -> Result<Vec<(String, Option<u8>, String)>> {
    let path = features_dir.join("labels.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let label = match record.get(1).unwrap_or("") {
            "" => None,
            s => Some(
                s.parse::<u8>()
                    .map_err(|_| Error::invalid(format!("bad label {s:?} in labels.csv")))?,
            ),
        };
        out.push((
            record.get(0).unwrap_or("").to_string(),
            label,
            record.get(2).unwrap_or("").to_string(),
        ));
    }
    Ok(out)
}

/// One split of one stream, embedded and ready for the model.
pub struct SplitData {
    pub video_ids: Vec<String>,
    pub samples: Vec<Sample>,
}

pub fn load_split(
    features_dir: &Path,
    split: &str,
    stream: Stream,
    cfg: &RunConfig,
) -> Result<SplitData> {
    let path = features_dir.join(format!("{split}_{}.csv", stream.tag().to_lowercase()));
    let seqs = read_feature_csv(&path, 0.0)?;
    let labels = read_labels(features_dir)?;
    let mut video_ids = Vec::with_capacity(seqs.len());
    let mut samples = Vec::with_capacity(seqs.len());
    for seq in &seqs {
        let label = labels
            .iter()
            .find(|(id, _, s)| id == &seq.video_id && s == split)
            .and_then(|(_, l, _)| *l)
            .ok_or_else(|| {
                Error::invalid(format!("no label for video {} in split {split}", seq.video_id))
            })?;
        samples.push((sequence_to_model_input(seq, cfg)?, label));
        video_ids.push(seq.video_id.clone());
    }
    Ok(SplitData { video_ids, samples })
}

pub struct TrainedStreams {
    pub history_fe: Vec<EpochStats>,
    pub history_hp: Vec<EpochStats>,
}

/// Train both stream models on the train/val splits; write
/// `checkpoint_{fe,hp}.json` and `history_{fe,hp}.json` into `out_dir`.
pub fn train_streams(features_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<TrainedStreams> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let tcfg = cfg.train_config();
    let mut histories = Vec::with_capacity(2);
    for stream in [Stream::Fe, Stream::Hp] {
        let train_data = load_split(features_dir, "train", stream, cfg)?;
        let val_data = load_split(features_dir, "val", stream, cfg)?;
        let outcome = train(
            &train_data.samples,
            &val_data.samples,
            &tcfg,
            &cfg.model_config(stream),
        )?;
        let tag = stream.tag().to_lowercase();
        save_checkpoint(&outcome.params, &out_dir.join(format!("checkpoint_{tag}.json")))?;
        let mut text = serde_json::to_string_pretty(&outcome.history)?;
        text.push('\n');
        let hpath = out_dir.join(format!("history_{tag}.json"));
        write_atomic(&hpath, text.as_bytes()).map_err(|e| Error::file(hpath, e))?;
        histories.push(outcome.history);
    }
    write_config(out_dir, cfg)?;
    let history_hp = histories.pop().unwrap();
    let history_fe = histories.pop().unwrap();
    Ok(TrainedStreams {
        history_fe,
        history_hp,
    })
}

fn check_checkpoint(params: &ModelParams, stream: Stream, cfg: &RunConfig) -> Result<()> {
    let expected = cfg.embed_dim * stream.dim();
    if params.config.input_dim != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} checkpoint expects input_dim {}, run config implies {expected} \
             (embed-dim {} × {} features)",
            stream.tag(),
            params.config.input_dim,
            cfg.embed_dim,
            stream.dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub video_id: String,
    pub p_fe: f64,
    pub p_hp: f64,
    pub mass: MassFunction,
    pub label_pred: u8,
    pub label_true: Option<u8>,
}

fn fuse(p_fe: f64, p_hp: f64, discount: f64) -> Result<(MassFunction, u8)> {
    let m_fe = mass_from_prob(p_fe, discount)?;
    let m_hp = mass_from_prob(p_hp, discount)?;
    let mass = dempster_combine(&m_fe, &m_hp)?;
    let label = decide(&mass, DEFAULT_THRESHOLD);
    Ok((mass, label))
}

pub fn write_verdicts(path: &Path, verdicts: &[Verdict]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "video_id", "p_fe", "p_hp", "m_real", "m_fake", "m_theta", "label_pred", "label_true",
    ])?;
    for v in verdicts {
        w.write_record([
            v.video_id.as_str(),
            &v.p_fe.to_string(),
            &v.p_hp.to_string(),
            &v.mass.m_real.to_string(),
            &v.mass.m_fake.to_string(),
            &v.mass.m_theta.to_string(),
            &v.label_pred.to_string(),
            &v.label_true.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(path, &bytes).map_err(|e| Error::file(path, e))
}

pub struct EvalOutputs {
    pub report_fe: EvalReport,
    pub report_hp: EvalReport,
    pub report_fused: EvalReport,
    pub verdicts: Vec<Verdict>,
}

/// Evaluate both checkpoints on the test split, fuse per-video, and write
/// per-stream reports, the fused report and ROC, and `verdicts.csv`.
pub fn evaluate(
    features_dir: &Path,
    checkpoint_fe: &Path,
    checkpoint_hp: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<EvalOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let params_fe = load_checkpoint(checkpoint_fe)?;
    let params_hp = load_checkpoint(checkpoint_hp)?;
    check_checkpoint(&params_fe, Stream::Fe, cfg)?;
    check_checkpoint(&params_hp, Stream::Hp, cfg)?;

    let test_fe = load_split(features_dir, "test", Stream::Fe, cfg)?;
    let test_hp = load_split(features_dir, "test", Stream::Hp, cfg)?;
    if test_fe.video_ids != test_hp.video_ids {
        return Err(Error::invalid("FE and HP test splits list different videos"));
    }

    let mut verdicts = Vec::with_capacity(test_fe.video_ids.len());
    let mut probs_fe = Vec::new();
    let mut probs_hp = Vec::new();
    let mut fused_scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..test_fe.video_ids.len() {
        let (seq_fe, label) = &test_fe.samples[i];
        let (seq_hp, _) = &test_hp.samples[i];
        let p_fe = model::predict(&params_fe, seq_fe.view())?;
        let p_hp = model::predict(&params_hp, seq_hp.view())?;
        let (mass, label_pred) = fuse(p_fe, p_hp, cfg.discount)?;
        probs_fe.push(p_fe);
        probs_hp.push(p_hp);
        fused_scores.push(mass.pignistic_fake());
        labels.push(*label);
        verdicts.push(Verdict {
            video_id: test_fe.video_ids[i].clone(),
            p_fe,
            p_hp,
            mass,
            label_pred,
            label_true: Some(*label),
        });
    }

    let report_fe = roc_auc(&probs_fe, &labels)?;
    let report_hp = roc_auc(&probs_hp, &labels)?;
    let report_fused = roc_auc(&fused_scores, &labels)?;
    write_report(&report_fe, &out_dir.join("report_fe.json"), ReportFormat::Json)?;
    write_report(&report_hp, &out_dir.join("report_hp.json"), ReportFormat::Json)?;
    write_report(
        &report_fused,
        &out_dir.join("report_fused.json"),
        ReportFormat::Json,
    )?;
    write_report(
        &report_fused,
        &out_dir.join("roc_fused.csv"),
        ReportFormat::Csv,
    )?;
    write_verdicts(&out_dir.join("verdicts.csv"), &verdicts)?;
    write_config(out_dir, cfg)?;
    Ok(EvalOutputs {
        report_fe,
        report_hp,
        report_fused,
        verdicts,
    })
}

/// Full pipeline for one track file against trained checkpoints.
pub fn predict_one(
    track_path: &Path,
    checkpoint_fe: &Path,
    checkpoint_hp: &Path,
    cfg: &RunConfig,
) -> Result<Verdict> {
    cfg.validate()?;
    let params_fe = load_checkpoint(checkpoint_fe)?;
    let params_hp = load_checkpoint(checkpoint_hp)?;
    check_checkpoint(&params_fe, Stream::Fe, cfg)?;
    check_checkpoint(&params_hp, Stream::Hp, cfg)?;
    let track = load_track(track_path, cfg)?;
    let model = face3d::ShapeModel::bundled();
    let (fe, hp) = build_sequences(&track, &model, &cfg.feature_params())?;
    let p_fe = model::predict(&params_fe, sequence_to_model_input(&fe, cfg)?.view())?;
    let p_hp = model::predict(&params_hp, sequence_to_model_input(&hp, cfg)?.view())?;
    let (mass, label_pred) = fuse(p_fe, p_hp, cfg.discount)?;
    Ok(Verdict {
        video_id: track.video_id,
        p_fe,
        p_hp,
        mass,
        label_pred,
        label_true: track.label.map(Label::as_u8),
    })
}

/// Paths produced by [`synth_dataset`] et al., for callers that need them.
pub fn manifest_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("manifest.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        RunConfig {
            hidden: 16,
            layers: 1,
            heads: 2,
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            max_len: 64,
            ..RunConfig::default()
        }
    }

    fn small_synth() -> SynthConfig {
        SynthConfig {
            n_frames: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(20, [0.8, 0.1, 0.1]), [16, 2, 2]);
        assert_eq!(split_sizes(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(split_sizes(0, [0.8, 0.1, 0.1]), [0, 0, 0]);
        assert_eq!(split_sizes(3, [1.0, 0.0, 0.0]), [3, 0, 0]);
    }

    #[test]
    fn config_round_trip_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seed: 9,
            tau: 2,
            ..RunConfig::default()
        };
        write_config(dir.path(), &cfg).unwrap();
        let back = load_config(&dir.path().join("config.json")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn synth_dataset_layout_and_determinism() {
        let cfg = small_cfg();
        let dir_a = tempfile::tempdir().unwrap();
        let rows_a = synth_dataset(dir_a.path(), 3, &small_synth(), &cfg).unwrap();
        assert_eq!(rows_a.len(), 6);
        assert_eq!(rows_a.iter().filter(|r| r.label == Some(1)).count(), 3);
        for r in &rows_a {
            assert!(dir_a.path().join(&r.file).exists(), "{} missing", r.file);
        }
        assert_eq!(read_manifest(&manifest_path(dir_a.path())).unwrap(), rows_a);

        let dir_b = tempfile::tempdir().unwrap();
        let rows_b = synth_dataset(dir_b.path(), 3, &small_synth(), &cfg).unwrap();
        assert_eq!(rows_a, rows_b);
        for r in &rows_a {
            let a = std::fs::read(dir_a.path().join(&r.file)).unwrap();
            let b = std::fs::read(dir_b.path().join(&r.file)).unwrap();
            assert_eq!(a, b, "{} differs between identical runs", r.file);
        }
    }

    #[test]
    fn feature_extraction_splits_and_skips() {
        let cfg = small_cfg();
        let data = tempfile::tempdir().unwrap();
        let mut rows = synth_dataset(data.path(), 5, &small_synth(), &cfg).unwrap();

        // Corrupt one file and add a manifest row pointing nowhere.
        std::fs::write(data.path().join(&rows[0].file), b"{not json").unwrap();
        rows.push(ManifestRow {
            video_id: "ghost".into(),
            file: "missing.json".into(),
            label: Some(0),
        });
        write_manifest(&manifest_path(data.path()), &rows).unwrap();

        let out = tempfile::tempdir().unwrap();
        let summary = extract_features(&manifest_path(data.path()), out.path(), &cfg).unwrap();
        assert_eq!(summary.n_ok, 9);
        assert_eq!(summary.skipped.len(), 2);
        assert_eq!(summary.split_counts.iter().sum::<usize>(), 9);
        for split in SPLIT_NAMES {
            assert!(out.path().join(format!("{split}_fe.csv")).exists());
            assert!(out.path().join(format!("{split}_hp.csv")).exists());
        }
        let labels = read_labels(out.path()).unwrap();
        assert_eq!(labels.len(), 9);
    }

    #[test]
    fn split_assignment_deterministic_per_seed() {
        let cfg = small_cfg();
        let data = tempfile::tempdir().unwrap();
        synth_dataset(data.path(), 5, &small_synth(), &cfg).unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        extract_features(&manifest_path(data.path()), out_a.path(), &cfg).unwrap();
        extract_features(&manifest_path(data.path()), out_b.path(), &cfg).unwrap();
        for split in SPLIT_NAMES {
            for stream in ["fe", "hp"] {
                let f = format!("{split}_{stream}.csv");
                let a = std::fs::read(out_a.path().join(&f)).unwrap();
                let b = std::fs::read(out_b.path().join(&f)).unwrap();
                assert_eq!(a, b, "{f} differs");
            }
        }

        let out_c = tempfile::tempdir().unwrap();
        let other = RunConfig {
            seed: 1,
            ..small_cfg()
        };
        extract_features(&manifest_path(data.path()), out_c.path(), &other).unwrap();
        let a = std::fs::read_to_string(out_a.path().join("labels.csv")).unwrap();
        let c = std::fs::read_to_string(out_c.path().join("labels.csv")).unwrap();
        assert_ne!(a, c, "different seeds should shuffle differently");
    }

    #[test]
    fn end_to_end_smoke() {
        let cfg = RunConfig {
            epochs: 3,
            ..small_cfg()
        };
        let data = tempfile::tempdir().unwrap();
        synth_dataset(data.path(), 10, &small_synth(), &cfg).unwrap();
        let feats = tempfile::tempdir().unwrap();
        extract_features(&manifest_path(data.path()), feats.path(), &cfg).unwrap();
        let run = tempfile::tempdir().unwrap();
        let trained = train_streams(feats.path(), run.path(), &cfg).unwrap();
        assert_eq!(trained.history_fe.len(), 3);
        assert_eq!(trained.history_hp.len(), 3);

        let outputs = evaluate(
            feats.path(),
            &run.path().join("checkpoint_fe.json"),
            &run.path().join("checkpoint_hp.json"),
            run.path(),
            &cfg,
        )
        .unwrap();
        assert_eq!(outputs.verdicts.len(), 2);
        assert!(run.path().join("report_fused.json").exists());
        assert!(run.path().join("verdicts.csv").exists());
        for v in &outputs.verdicts {
            let sum = v.mass.m_real + v.mass.m_fake + v.mass.m_theta;
            assert!((sum - 1.0).abs() < 1e-9);
        }

        // Single-track prediction through the same checkpoints.
        let manifest = read_manifest(&manifest_path(data.path())).unwrap();
        let verdict = predict_one(
            &data.path().join(&manifest[0].file),
            &run.path().join("checkpoint_fe.json"),
            &run.path().join("checkpoint_hp.json"),
            &cfg,
        )
        .unwrap();
        assert!(verdict.label_pred <= 1);
        assert!((0.0..=1.0).contains(&verdict.p_fe));
        assert!((0.0..=1.0).contains(&verdict.p_hp));
    }

    #[test]
    fn checkpoint_mismatch_is_rejected() {
        let cfg = small_cfg();
        let params = model::init_model(&cfg.model_config(Stream::Fe)).unwrap();
        let other = RunConfig {
            embed_dim: 5,
            ..small_cfg()
        };
        assert!(matches!(
            check_checkpoint(&params, Stream::Fe, &other),
            Err(Error::ShapeMismatch(_))
        ));
        check_checkpoint(&params, Stream::Fe, &cfg).unwrap();
    }
}
