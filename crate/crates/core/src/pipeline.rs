//! End-to-end steps over a corpus directory: annotate, train, detect and
//! evaluate. Each step reads and writes plain files so the steps can run
//! as separate processes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{PipelineConfig, Precision};
use crate::dataset::{
    frame_and_label, frame_labels, make_representations, resolve, split_corpus, CorpusSplit, FrameDataset, Manifest,
    ManifestEntry, Representation, RepresentationSet, FRAME_LEN,
};
use crate::decode::decode_probs;
use crate::egg::annotate;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::marks::GciMarks;
use crate::metrics::{compute_metrics, format_key_values, format_report, frame_f1, EvalReport};
use crate::models::{train_joint, train_single_column, EpochLog, FinalModel, JointModel, SingleColumn};
use crate::parallel::par_map;
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::signal::{prepare_egg, prepare_speech, read_wav, Waveform};
use crate::synth::gen_corpus;
use crate::zff::zff_epochs;

/// Seed streams of the pipeline, kept clear of the per-recording corpus
/// streams `0..n`.
const SPLIT_STREAM: u64 = 1 << 40;
const MODEL_STREAM: u64 = (1 << 40) + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    Model1,
    Model2,
    Model3,
    Model4,
    Joint,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [Self::Model1, Self::Model2, Self::Model3, Self::Model4, Self::Joint];
    pub const COLUMNS: [ModelId; 4] = [Self::Model1, Self::Model2, Self::Model3, Self::Model4];

    pub fn name(self) -> &'static str {
        match self {
            Self::Model1 => "model1",
            Self::Model2 => "model2",
            Self::Model3 => "model3",
            Self::Model4 => "model4",
            Self::Joint => "joint",
        }
    }

    /// Input of a single-column model; `None` for the joint model.
    pub fn representation(self) -> Option<Representation> {
        match self {
            Self::Model1 => Some(Representation::LpfS),
            Self::Model2 => Some(Representation::LpfLpr),
            Self::Model3 => Some(Representation::PcLpfS),
            Self::Model4 => Some(Representation::PcLpfLpr),
            Self::Joint => None,
        }
    }

    pub fn seed(self, root: u64) -> u64 {
        derive_seed(root, MODEL_STREAM + self as u64)
    }

    pub fn checkpoint_path(self, cfg: &PipelineConfig) -> PathBuf {
        cfg.paths.checkpoint_dir.join(format!("{}.gcn", self.name()))
    }

    pub fn loss_log_path(self, cfg: &PipelineConfig) -> PathBuf {
        cfg.paths.checkpoint_dir.join(format!("{}.loss.csv", self.name()))
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{s}' (model1..model4, joint)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    /// Model 1 fused with the joint model.
    Proposed,
    Zff,
    /// One trained model on its own.
    Model(ModelId),
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Zff => "zff",
            Self::Model(m) => m.name(),
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "zff" => Ok(Self::Zff),
            other => other
                .parse()
                .map(Self::Model)
                .map_err(|_| Error::InvalidArgument(format!("unknown detector '{other}' (proposed, zff, model1..model4, joint)"))),
        }
    }
}

/// Which recordings a step covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Subset {
    #[default]
    Test,
    All,
}

/// Marks that detections are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reference {
    /// EGG-derived annotation written by the annotate step.
    #[default]
    Annotation,
    /// The manifest's marks files (synthetic ground truth).
    Truth,
}

impl FromStr for Reference {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotation" => Ok(Self::Annotation),
            "truth" => Ok(Self::Truth),
            other => Err(Error::InvalidArgument(format!("unknown reference '{other}' (annotation, truth)"))),
        }
    }
}

pub fn load_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    let path = cfg.paths.manifest();
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("manifest {} not found (run synth first)", path.display())));
    }
    Manifest::load(&path)
}

pub fn corpus_split(cfg: &PipelineConfig, manifest: &Manifest) -> Result<CorpusSplit> {
    split_corpus(
        &manifest.ids(),
        cfg.split.train_fraction,
        cfg.split.val_fraction,
        derive_seed(cfg.seed, SPLIT_STREAM),
    )
}

fn subset_ids(cfg: &PipelineConfig, manifest: &Manifest, subset: Subset) -> Result<Vec<String>> {
    Ok(match subset {
        Subset::All => manifest.ids(),
        Subset::Test => corpus_split(cfg, manifest)?.test,
    })
}

fn entry<'a>(manifest: &'a Manifest, id: &str) -> Result<&'a ManifestEntry> {
    manifest
        .get(id)
        .ok_or_else(|| Error::InvalidArgument(format!("recording '{id}' is not in the manifest")))
}

fn convert<T: Scalar>(w: &Waveform<f64>) -> Result<Waveform<T>> {
    Waveform::new(w.samples.iter().map(|&v| T::of(v)).collect(), w.sample_rate_hz, w.role)
}

/// Prepared speech (16 kHz, configured polarity, peak 0.99) and the EGG
/// channel at 16 kHz when present.
pub fn load_recording<T: Scalar>(cfg: &PipelineConfig, e: &ManifestEntry) -> Result<(Waveform<T>, Option<Waveform<T>>)> {
    let (speech, egg) = read_wav(&resolve(&cfg.paths.manifest(), &e.wav_path))?;
    let speech = prepare_speech(&convert::<T>(&speech)?, cfg.signal.polarity)?;
    let egg = egg.map(|g| prepare_egg(&convert::<T>(&g)?)).transpose()?;
    Ok((speech, egg))
}

pub fn annotation_path(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.paths.annotation_dir().join(format!("{id}.marks"))
}

pub fn detection_path(cfg: &PipelineConfig, detector: Detector, id: &str) -> PathBuf {
    cfg.paths.detection_dir.join(detector.name()).join(format!("{id}.marks"))
}

pub fn synth_step(cfg: &PipelineConfig) -> Result<Manifest> {
    gen_corpus(
        cfg.synth.n_recordings,
        &cfg.synth.preset_mix()?,
        cfg.seed,
        &cfg.synth.corpus_spec(),
        &cfg.paths.corpus_dir,
        cfg.jobs,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub id: String,
    pub n_marks: usize,
    pub delay: Option<usize>,
    pub confident: bool,
}

/// EGG annotation of every recording; writes `annotations/<id>.marks` and
/// `annotations/delays.tsv`.
pub fn annotate_step(cfg: &PipelineConfig) -> Result<Vec<AnnotationRow>> {
    let manifest = load_manifest(cfg)?;
    let rows = par_map(&manifest.entries, cfg.jobs, |e| -> Result<AnnotationRow> {
        let (speech, egg) = load_recording::<f64>(cfg, e)?;
        let egg = egg.ok_or_else(|| {
            Error::InvalidArgument(format!("{}: no EGG channel to annotate from", e.wav_path.display()))
        })?;
        let a = annotate(&speech, &egg, &cfg.annotate)?;
        a.marks.save(&annotation_path(cfg, &e.id))?;
        Ok(AnnotationRow {
            id: e.id.clone(),
            n_marks: a.marks.len(),
            delay: a.delay.map(|d| d.samples),
            confident: a.delay.is_some_and(|d| d.is_confident()),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut table = String::from("id\tmarks\tdelay_samples\tconfident\n");
    for r in &rows {
        let d = r.delay.map_or("none".to_string(), |d| d.to_string());
        table.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, r.n_marks, d, r.confident));
    }
    atomic_write(&cfg.paths.annotation_dir().join("delays.tsv"), table.as_bytes())?;
    Ok(rows)
}

fn load_annotation(cfg: &PipelineConfig, id: &str) -> Result<GciMarks> {
    let p = annotation_path(cfg, id);
    if !p.exists() {
        return Err(Error::InvalidArgument(format!("annotation {} not found (run annotate first)", p.display())));
    }
    GciMarks::load(&p)
}

/// Labeled frames of the given recordings, in the given order.
pub fn build_dataset<T: Scalar>(cfg: &PipelineConfig, manifest: &Manifest, ids: &[String]) -> Result<FrameDataset<T>> {
    let parts = par_map(ids, cfg.jobs, |id| -> Result<FrameDataset<T>> {
        let (speech, _) = load_recording::<T>(cfg, entry(manifest, id)?)?;
        let reps = make_representations(&speech, &cfg.lp)?;
        Ok(frame_and_label(&reps, &load_annotation(cfg, id)?, id))
    });
    Ok(FrameDataset::concat(parts.into_iter().collect::<Result<Vec<_>>>()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRow {
    pub model: ModelId,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_bce: f64,
}

/// Trains the requested models (all five when `only` is empty) and writes
/// `<model>.gcn`, `<model>.loss.csv` and `split.tsv` to the checkpoint
/// directory. Training the joint model alone reuses saved Models 3 and 4.
pub fn train_step(cfg: &PipelineConfig, only: &[ModelId]) -> Result<Vec<TrainedRow>> {
    match cfg.precision {
        Precision::F64 => train_impl::<f64>(cfg, only),
        Precision::F32 => train_impl::<f32>(cfg, only),
    }
}

fn split_table(split: &CorpusSplit) -> String {
    let mut s = String::from("id\tset\n");
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for id in ids {
            s.push_str(&format!("{id}\t{name}\n"));
        }
    }
    s
}

fn train_impl<T: Scalar>(cfg: &PipelineConfig, only: &[ModelId]) -> Result<Vec<TrainedRow>> {
    let manifest = load_manifest(cfg)?;
    let split = corpus_split(cfg, &manifest)?;
    let train = build_dataset::<T>(cfg, &manifest, &split.train)?;
    let val = build_dataset::<T>(cfg, &manifest, &split.val)?;
    atomic_write(&cfg.paths.checkpoint_dir.join("split.tsv"), split_table(&split).as_bytes())?;
    let wanted = |m: ModelId| only.is_empty() || only.contains(&m);
    let mut columns: BTreeMap<ModelId, SingleColumn<T>> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut finish = |m: ModelId, log: &[EpochLog], best_epoch: usize, best_val_bce: f64| -> Result<()> {
        atomic_write(&m.loss_log_path(cfg), EpochLog::to_csv(log).as_bytes())?;
        rows.push(TrainedRow {
            model: m,
            epochs: log.len(),
            best_epoch,
            best_val_bce,
        });
        Ok(())
    };
    for m in ModelId::COLUMNS {
        if !wanted(m) {
            continue;
        }
        let r = m.representation().expect("column model");
        let t = train_single_column(r, &train, &val, m.seed(cfg.seed), &cfg.column, &cfg.train)?;
        t.model.save(&m.checkpoint_path(cfg))?;
        finish(m, &t.log, t.best_epoch, t.best_val_bce)?;
        columns.insert(m, t.model);
    }
    if wanted(ModelId::Joint) {
        let mut column = |m: ModelId| -> Result<SingleColumn<T>> {
            match columns.remove(&m) {
                Some(c) => Ok(c),
                None => load_column(cfg, m),
            }
        };
        let (speech, residual) = (column(ModelId::Model3)?, column(ModelId::Model4)?);
        let t = train_joint(&speech, &residual, &train, &val, ModelId::Joint.seed(cfg.seed), &cfg.train)?;
        t.model.save(&ModelId::Joint.checkpoint_path(cfg))?;
        finish(ModelId::Joint, &t.log, t.best_epoch, t.best_val_bce)?;
    }
    let mut summary = String::from("model\tepochs\tbest_epoch\tbest_val_bce\n");
    for r in &rows {
        summary.push_str(&format!("{}\t{}\t{}\t{:.10}\n", r.model, r.epochs, r.best_epoch, r.best_val_bce));
    }
    atomic_write(&cfg.paths.checkpoint_dir.join("summary.tsv"), summary.as_bytes())?;
    Ok(rows)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("checkpoint {} not found (run train first)", path.display())))
    }
}

fn load_column<T: Scalar>(cfg: &PipelineConfig, m: ModelId) -> Result<SingleColumn<T>> {
    let path = m.checkpoint_path(cfg);
    require(&path)?;
    let r = m.representation().ok_or_else(|| Error::InvalidArgument(format!("{m} is not a single-column model")))?;
    SingleColumn::load(&path, r, &cfg.column)
}

fn load_joint<T: Scalar>(cfg: &PipelineConfig) -> Result<JointModel<T>> {
    let path = ModelId::Joint.checkpoint_path(cfg);
    require(&path)?;
    JointModel::load(&path)
}

enum Predictor<T> {
    Final(FinalModel<T>),
    Column(SingleColumn<T>),
    Joint(JointModel<T>),
}

impl<T: Scalar> Predictor<T> {
    fn load(cfg: &PipelineConfig, detector: Detector) -> Result<Self> {
        Ok(match detector {
            Detector::Proposed => {
                Predictor::Final(FinalModel::new(load_column(cfg, ModelId::Model1)?, load_joint(cfg)?, cfg.fusion)?)
            }
            Detector::Model(ModelId::Joint) => Predictor::Joint(load_joint(cfg)?),
            Detector::Model(m) => Predictor::Column(load_column(cfg, m)?),
            Detector::Zff => return Err(Error::InvalidArgument("ZFF has no learned predictor".into())),
        })
    }

    fn frame_probs(&self, reps: &RepresentationSet<T>) -> Result<Vec<f64>> {
        let to64 = |v: Vec<T>| v.into_iter().map(|p| p.to_f64().unwrap()).collect();
        match self {
            Predictor::Final(f) => f.predict_frame_probs(reps),
            Predictor::Column(c) => c.predict_reps(reps).map(to64),
            Predictor::Joint(j) => j.predict_reps(reps).map(to64),
        }
    }
}

/// Probability trace as `frame<TAB>start_sample<TAB>p` lines.
fn probs_table(p: &[f64]) -> String {
    let mut s = String::from("frame\tstart_sample\tp\n");
    for (f, v) in p.iter().enumerate() {
        s.push_str(&format!("{f}\t{}\t{v:.8}\n", f * FRAME_LEN));
    }
    s
}

/// Runs a detector over a subset; writes `<detections>/<detector>/<id>.marks`
/// and, for learned detectors, `<id>.probs.tsv`.
pub fn detect_step(cfg: &PipelineConfig, detector: Detector, subset: Subset) -> Result<Vec<(String, GciMarks)>> {
    match cfg.precision {
        Precision::F64 => detect_impl::<f64>(cfg, detector, subset),
        Precision::F32 => detect_impl::<f32>(cfg, detector, subset),
    }
}

fn detect_impl<T: Scalar>(cfg: &PipelineConfig, detector: Detector, subset: Subset) -> Result<Vec<(String, GciMarks)>> {
    cfg.decode.validate()?;
    let manifest = load_manifest(cfg)?;
    let ids = subset_ids(cfg, &manifest, subset)?;
    let predictor = match detector {
        Detector::Zff => None,
        d => Some(Predictor::<T>::load(cfg, d)?),
    };
    let out = par_map(&ids, cfg.jobs, |id| -> Result<(String, GciMarks)> {
        let e = entry(&manifest, id)?;
        let marks = match &predictor {
            None => {
                let (speech, _) = load_recording::<f64>(cfg, e)?;
                zff_epochs(&speech, &cfg.zff)?.marks
            }
            Some(p) => {
                let (speech, _) = load_recording::<T>(cfg, e)?;
                let reps = make_representations(&speech, &cfg.lp)?;
                let probs = p.frame_probs(&reps)?;
                let path = detection_path(cfg, detector, id).with_extension("probs.tsv");
                atomic_write(&path, probs_table(&probs).as_bytes())?;
                decode_probs(&probs, &reps, &cfg.decode)?
            }
        };
        marks.save(&detection_path(cfg, detector, id))?;
        Ok((id.clone(), marks))
    });
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingEval {
    pub id: String,
    pub label: String,
    pub detector: Detector,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    /// Corpus-level rows, one per detector.
    pub rows: Vec<(String, EvalReport)>,
    /// Per detector and label, when requested.
    pub per_disorder: Vec<(String, EvalReport)>,
    pub recordings: Vec<RecordingEval>,
    pub table: String,
}

fn reference_marks(cfg: &PipelineConfig, manifest: &Manifest, id: &str, reference: Reference) -> Result<GciMarks> {
    match reference {
        Reference::Annotation => load_annotation(cfg, id),
        Reference::Truth => GciMarks::load(&resolve(&cfg.paths.manifest(), &entry(manifest, id)?.marks_path)),
    }
}

fn recording_len(cfg: &PipelineConfig, e: &ManifestEntry) -> Result<usize> {
    let (speech, _) = load_recording::<f64>(cfg, e)?;
    Ok(speech.len())
}

/// Scores detection files of each detector against the reference marks
/// and writes `table.txt`, `report.txt`, `per_recording.tsv` and
/// `plots/<id>.marks.tsv` (mark overlays) to the report directory.
pub fn eval_step(
    cfg: &PipelineConfig,
    detectors: &[Detector],
    subset: Subset,
    reference: Reference,
    per_disorder: bool,
) -> Result<EvalOutput> {
    if detectors.is_empty() {
        return Err(Error::InvalidArgument("no detectors to evaluate".into()));
    }
    let manifest = load_manifest(cfg)?;
    let ids = subset_ids(cfg, &manifest, subset)?;
    let per_rec = par_map(&ids, cfg.jobs, |id| -> Result<Vec<RecordingEval>> {
        let e = entry(&manifest, id)?;
        let refs = reference_marks(cfg, &manifest, id, reference)?;
        let n_frames = recording_len(cfg, e)? / FRAME_LEN;
        let truth_frames = frame_labels(n_frames, &refs);
        let mut overlay = String::from("sample\tkind\n");
        for &m in refs.positions() {
            overlay.push_str(&format!("{m}\treference\n"));
        }
        let mut out = Vec::new();
        for &d in detectors {
            let path = detection_path(cfg, d, id);
            if !path.exists() {
                return Err(Error::InvalidArgument(format!("detections {} not found (run detect --detector {d})", path.display())));
            }
            let dets = GciMarks::load(&path)?;
            for &m in dets.positions() {
                overlay.push_str(&format!("{m}\t{d}\n"));
            }
            let mut report = compute_metrics(&refs, &dets, crate::signal::TARGET_RATE_HZ)?;
            report.frame = Some(frame_f1(&frame_labels(n_frames, &dets), &truth_frames)?);
            out.push(RecordingEval {
                id: id.clone(),
                label: e.disorder_label.clone(),
                detector: d,
                report,
            });
        }
        atomic_write(&cfg.paths.report_dir.join("plots").join(format!("{id}.marks.tsv")), overlay.as_bytes())?;
        Ok(out)
    });
    let recordings: Vec<RecordingEval> = per_rec.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();

    let merged = |pred: &dyn Fn(&RecordingEval) -> bool| -> Result<EvalReport> {
        let parts: Vec<EvalReport> = recordings.iter().filter(|r| pred(r)).map(|r| r.report.clone()).collect();
        EvalReport::merge(&parts)
    };
    let mut rows = Vec::new();
    for &d in detectors {
        rows.push((d.name().to_string(), merged(&|r| r.detector == d)?));
    }
    let mut per_disorder_rows = Vec::new();
    if per_disorder {
        let mut labels: Vec<String> = recordings.iter().map(|r| r.label.clone()).collect();
        labels.sort();
        labels.dedup();
        for &d in detectors {
            for l in &labels {
                per_disorder_rows.push((format!("{d} [{l}]"), merged(&|r| r.detector == d && &r.label == l)?));
            }
        }
    }

    let mut table = format_report(&rows);
    if per_disorder {
        table.push('\n');
        table.push_str(&format_report(&per_disorder_rows));
    }
    let mut all_rows = rows.clone();
    all_rows.extend(per_disorder_rows.iter().cloned());
    let dir = &cfg.paths.report_dir;
    atomic_write(&dir.join("table.txt"), table.as_bytes())?;
    atomic_write(&dir.join("report.txt"), format_key_values(&all_rows).as_bytes())?;
    let mut tsv = String::from("id\tlabel\tdetector\tn_ref\tidentified\tmissed\tfalse_alarm\tidr\tmr\tfar\tida_ms\n");
    for r in &recordings {
        let p = &r.report;
        let ida = p.ida_ms().map_or("n/a".to_string(), |v| format!("{v:.4}"));
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
            r.id, r.label, r.detector, p.n_ref, p.identified, p.missed, p.false_alarm, p.idr(), p.mr(), p.far(), ida
        ));
    }
    atomic_write(&dir.join("per_recording.tsv"), tsv.as_bytes())?;
    Ok(EvalOutput {
        rows,
        per_disorder: per_disorder_rows,
        recordings,
        table,
    })
}
