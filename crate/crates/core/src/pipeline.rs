//! On-disk run directories shared by the command line and the server.
//!
//! A run directory holds the observed artifacts written by `tree`, an
//! optional `ensemble/` written by `mimic`, and `reliability/` reports.
//! Every writer records a `manifest.toml` with the run configuration and
//! the tool version.
//!
//! ```text
//! run/
//!   manifest.toml  counts.csv  proportions.csv  distance.csv  distance.meta
//!   dendrogram.txt  tree.nwk  codes.tsv
//!   heatmap/   manifest.toml  bundle.json  ordered_matrix.csv  boundaries.txt  tree.nwk
//!   ensemble/  manifest.toml  codes/replicate_00000.tsv ...
//!   reliability/  report_001.json ...
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::{encode, CodeTable, CodesError};
use crate::distance::{distance_matrix, DistanceError, Measure, DEFAULT_VARIANCE_FLOOR};
use crate::hclust::{ward_d2, Dendrogram, HclustError};
use crate::matrix::{
    load_blocked_counts, load_counts, render_blocked_counts, render_counts, to_proportions, CountMatrix, Labels,
    MatrixError, ProportionMatrix, VarianceSource,
};
use crate::mimicry::{
    build_ensemble, EnsembleConfig, MeasureConfig, MimicryEnsemble, MimicryError, Scheme, SourceData,
};
use crate::reliability::{evaluate_query, parse_queries, QuerySpec, ReliabilityError, ReportDocument};
use crate::report::{heatmap_export, HeatmapBundle, ReportError};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_CUT: usize = 6;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: MatrixError },
    #[error("{path}: malformed artifact: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error("artifacts in {0} come from different runs: {1}")]
    Inconsistent(PathBuf, String),
    #[error(transparent)]
    Query(#[from] ReliabilityError),
    #[error(transparent)]
    Mimicry(#[from] MimicryError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Hclust(#[from] HclustError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Coarse error classes, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Internal,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Io { .. } => ErrorClass::Io,
            PipelineError::Config(_)
            | PipelineError::Input { .. }
            | PipelineError::Artifact { .. }
            | PipelineError::Inconsistent(..)
            | PipelineError::Query(_) => ErrorClass::Validation,
            PipelineError::Report(ReportError::Cut(HclustError::CutOutOfRange { .. })) => ErrorClass::Validation,
            PipelineError::Mimicry(MimicryError::SchemeMismatch | MimicryError::NoReplicates) => ErrorClass::Validation,
            PipelineError::Mimicry(_)
            | PipelineError::Distance(_)
            | PipelineError::Hclust(_)
            | PipelineError::Report(_) => ErrorClass::Internal,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn artifact_err(path: &Path, reason: impl ToString) -> PipelineError {
    PipelineError::Artifact { path: path.to_path_buf(), reason: reason.to_string() }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Everything that determines a run's outputs. The output directory and
/// thread count are deliberately absent: they never change the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub blocked: bool,
    pub measure: Measure,
    pub variance: VarianceSource,
    pub floor: f64,
    pub replicates: usize,
    pub master_seed: u64,
    pub cut: Option<usize>,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            blocked: false,
            measure: Measure::Dstar,
            variance: VarianceSource::Theoretical,
            floor: DEFAULT_VARIANCE_FLOOR,
            replicates: DEFAULT_REPLICATES,
            master_seed: 0,
            cut: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        if !(self.floor.is_finite() && self.floor > 0.0) {
            return fail("variance floor must be positive and finite");
        }
        if self.replicates == 0 {
            return fail("replicate count must be at least 1");
        }
        if self.variance == VarianceSource::Empirical && self.replicates < 2 {
            return fail("empirical variances need at least 2 replicates");
        }
        if self.master_seed > i64::MAX as u64 {
            return fail("seed must be at most 2^63 - 1");
        }
        if self.cut == Some(0) {
            return fail("cut must be at least 1");
        }
        Ok(())
    }

    pub fn scheme(&self) -> Scheme {
        if self.blocked {
            Scheme::Blocked
        } else {
            Scheme::Homogeneous
        }
    }

    pub fn measure_config(&self) -> MeasureConfig {
        MeasureConfig { measure: self.measure, variance: self.variance, floor: self.floor }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig::new(self.scheme(), self.replicates, self.master_seed, self.measure_config())
    }

    /// The cut used for heatmap blocks on `k` populations.
    pub fn resolved_cut(&self, k: usize) -> usize {
        self.cut.unwrap_or(DEFAULT_CUT.min(k))
    }

    /// Same data and tree-building settings; the cut may differ.
    fn same_run(&self, other: &RunConfig) -> bool {
        RunConfig { cut: None, ..self.clone() } == RunConfig { cut: None, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub cut: usize,
    pub rows: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapMeta>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config: config.clone(),
            ensemble: None,
            heatmap: None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let manifest: Manifest = toml::from_str(&read(path)?).map_err(|e| artifact_err(path, e.message()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(artifact_err(path, format!("unsupported format version {}", manifest.format_version)));
        }
        Ok(manifest)
    }

    fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        write(&dir.join("manifest.toml"), self.to_toml())
    }
}

/// Reads the input named by the config, blocked or plain.
pub fn load_source(config: &RunConfig) -> Result<SourceData, PipelineError> {
    let path = &config.input;
    let file = fs::File::open(path).map_err(io_err(path))?;
    let input_err = |source| PipelineError::Input { path: path.clone(), source };
    if config.blocked {
        Ok(SourceData::Blocked(load_blocked_counts(io::BufReader::new(file)).map_err(input_err)?))
    } else {
        Ok(SourceData::Plain(load_counts(io::BufReader::new(file)).map_err(input_err)?))
    }
}

fn render_proportions(pm: &ProportionMatrix) -> String {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header = std::iter::once("population").chain(pm.labels().categories.iter().map(String::as_str));
    writer.write_record(header).expect("in-memory write");
    for (k, label) in pm.labels().populations.iter().enumerate() {
        let cells = std::iter::once(label.clone()).chain(pm.row(k).iter().map(f64::to_string));
        writer.write_record(cells).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 labels")
}

fn write_counts(out: &Path, source: &SourceData, observed: &CountMatrix) -> Result<(), PipelineError> {
    create_dir(out)?;
    write(&out.join("counts.csv"), render_counts(observed))?;
    if let SourceData::Blocked(bcm) = source {
        write(&out.join("blocked_counts.csv"), render_blocked_counts(bcm))?;
    }
    write(&out.join("proportions.csv"), render_proportions(&to_proportions(observed)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub populations: usize,
    pub categories: usize,
    pub blocks: Option<usize>,
}

/// Validates the input and writes the count and proportion tables.
pub fn run_ingest(config: &RunConfig, out: &Path) -> Result<IngestSummary, PipelineError> {
    config.validate()?;
    let source = load_source(config)?;
    let observed = source.observed().map_err(|source| PipelineError::Input { path: config.input.clone(), source })?;
    write_counts(out, &source, &observed)?;
    Manifest::new("ingest", config).write(out)?;
    Ok(IngestSummary {
        populations: observed.n_populations(),
        categories: observed.n_categories(),
        blocks: match &source {
            SourceData::Blocked(bcm) => Some(bcm.n_blocks()),
            SourceData::Plain(_) => None,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSummary {
    pub populations: usize,
    pub categories: usize,
    pub cut: usize,
    pub root_height: f64,
}

/// Observed pipeline: proportions, distances, Ward.D2 tree, codes and heatmap bundle.
pub fn run_tree(config: &RunConfig, out: &Path) -> Result<TreeSummary, PipelineError> {
    config.validate()?;
    let source = load_source(config)?;
    let observed = source.observed().map_err(|source| PipelineError::Input { path: config.input.clone(), source })?;
    let k = observed.n_populations();
    let cut = config.resolved_cut(k);
    if cut > k {
        return Err(PipelineError::Config(format!("cut {cut} exceeds the {k} populations")));
    }
    let pm = to_proportions(&observed);
    let ensemble = config.ensemble_config();
    let vars = ensemble.observed_variances(&source)?;
    let dm = distance_matrix(&pm, config.measure, vars.as_ref(), config.floor)?;
    let tree = ward_d2(&dm, config.measure.is_squared())?;
    let codes = encode(&tree);

    write_counts(out, &source, &observed)?;
    write(&out.join("distance.csv"), dm.to_csv())?;
    write(&out.join("distance.meta"), dm.metadata())?;
    write(&out.join("dendrogram.txt"), tree.to_text())?;
    write(&out.join("tree.nwk"), format!("{}\n", tree.to_newick(&pm.labels().populations)))?;
    write(&out.join("codes.tsv"), codes.to_tsv(&pm.labels().populations))?;
    write_heatmap(config, out, &pm, &tree, cut)?;
    Manifest::new("tree", config).write(out)?;
    Ok(TreeSummary { populations: k, categories: observed.n_categories(), cut, root_height: tree.height(tree.root()) })
}

fn write_heatmap(
    config: &RunConfig,
    out: &Path,
    pm: &ProportionMatrix,
    tree: &Dendrogram,
    cut: usize,
) -> Result<HeatmapBundle, PipelineError> {
    let bundle = heatmap_export(pm, tree, cut)?;
    let dir = out.join("heatmap");
    create_dir(&dir)?;
    write(&dir.join("bundle.json"), serde_json::to_string_pretty(&bundle).expect("bundle serializes"))?;
    write(&dir.join("ordered_matrix.csv"), bundle.ordered_csv())?;
    write(&dir.join("boundaries.txt"), bundle.boundaries_text())?;
    write(&dir.join("tree.nwk"), format!("{}\n", bundle.newick))?;
    let mut manifest = Manifest::new("heatmap", config);
    manifest.heatmap = Some(HeatmapMeta { cut, rows: bundle.order.len(), blocks: bundle.blocks.len() });
    manifest.write(&dir)?;
    Ok(bundle)
}

/// Re-exports the heatmap bundle of an existing run at another cut.
pub fn run_heatmap(run: &Path, cut: Option<usize>) -> Result<HeatmapBundle, PipelineError> {
    let observed = ObservedArtifacts::load(run)?;
    let mut config = observed.manifest.config.clone();
    if cut.is_some() {
        config.cut = cut;
    }
    config.validate()?;
    let g = config.resolved_cut(observed.proportions.n_populations());
    write_heatmap(&config, run, &observed.proportions, &observed.dendrogram, g)
}

fn replicate_file(b: usize, replicates: usize) -> String {
    let width = (replicates.saturating_sub(1)).to_string().len().max(5);
    format!("replicate_{b:0width$}.tsv")
}

/// Builds the mimicry ensemble and stores one code table per replicate.
pub fn run_mimic(config: &RunConfig, out: &Path) -> Result<MimicryEnsemble, PipelineError> {
    config.validate()?;
    let source = load_source(config)?;
    let ensemble = build_ensemble(&source, &config.ensemble_config())?;
    let dir = out.join("ensemble");
    let codes_dir = dir.join("codes");
    if codes_dir.exists() {
        fs::remove_dir_all(&codes_dir).map_err(io_err(&codes_dir))?;
    }
    create_dir(&codes_dir)?;
    let labels = &ensemble.labels().populations;
    for (b, table) in ensemble.trees().iter().enumerate() {
        write(&codes_dir.join(replicate_file(b, ensemble.len())), table.to_tsv(labels))?;
    }
    let mut manifest = Manifest::new("mimic", config);
    manifest.ensemble = Some(ensemble.config().clone());
    manifest.write(&dir)?;
    Ok(ensemble)
}

/// The observed artifacts of a run directory.
#[derive(Debug, Clone)]
pub struct ObservedArtifacts {
    pub manifest: Manifest,
    pub proportions: ProportionMatrix,
    pub dendrogram: Dendrogram,
    pub codes: CodeTable,
}

impl ObservedArtifacts {
    pub fn load(run: &Path) -> Result<Self, PipelineError> {
        let manifest = Manifest::load(&run.join("manifest.toml"))?;
        let counts_path = run.join("counts.csv");
        let counts = load_counts(read(&counts_path)?.as_bytes())
            .map_err(|source| PipelineError::Input { path: counts_path.clone(), source })?;
        let proportions = to_proportions(&counts);
        let tree_path = run.join("dendrogram.txt");
        let dendrogram = Dendrogram::from_text(&read(&tree_path)?).map_err(|e| artifact_err(&tree_path, e))?;
        let k = proportions.n_populations();
        if dendrogram.n_leaves() != k {
            return Err(PipelineError::Inconsistent(
                run.to_path_buf(),
                format!("dendrogram has {} leaves, counts have {k} rows", dendrogram.n_leaves()),
            ));
        }
        let codes_path = run.join("codes.tsv");
        let codes = CodeTable::from_tsv(&read(&codes_path)?, &proportions.labels().populations)
            .map_err(|e: CodesError| artifact_err(&codes_path, e))?;
        Ok(Self { manifest, proportions, dendrogram, codes })
    }

    pub fn labels(&self) -> &Labels {
        self.proportions.labels()
    }
}

/// Loads `run/ensemble`, checking it belongs to the same run as `observed`.
pub fn load_ensemble(run: &Path, observed: &ObservedArtifacts) -> Result<MimicryEnsemble, PipelineError> {
    let dir = run.join("ensemble");
    let manifest_path = dir.join("manifest.toml");
    let manifest = Manifest::load(&manifest_path)?;
    if !manifest.config.same_run(&observed.manifest.config) {
        return Err(PipelineError::Inconsistent(
            run.to_path_buf(),
            "ensemble manifest does not match the tree manifest".into(),
        ));
    }
    let config = manifest.ensemble.clone().ok_or_else(|| artifact_err(&manifest_path, "missing [ensemble] table"))?;
    let labels = &observed.labels().populations;
    let codes_dir = dir.join("codes");
    let trees = (0..config.replicates)
        .map(|b| {
            let path = codes_dir.join(replicate_file(b, config.replicates));
            CodeTable::from_tsv(&read(&path)?, labels).map_err(|e| artifact_err(&path, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MimicryEnsemble::from_trees(config, observed.labels().clone(), trees)?)
}

/// Everything a server or a reliability run needs, loaded once.
#[derive(Debug, Clone)]
pub struct Session {
    pub observed: ObservedArtifacts,
    pub heatmap: HeatmapBundle,
    pub ensemble: MimicryEnsemble,
}

impl Session {
    pub fn load(run: &Path) -> Result<Self, PipelineError> {
        let observed = ObservedArtifacts::load(run)?;
        let bundle_path = run.join("heatmap").join("bundle.json");
        let heatmap: HeatmapBundle =
            serde_json::from_str(&read(&bundle_path)?).map_err(|e| artifact_err(&bundle_path, e))?;
        if heatmap.order.len() != observed.proportions.n_populations() {
            return Err(PipelineError::Inconsistent(run.to_path_buf(), "heatmap rows differ from the counts".into()));
        }
        let ensemble = load_ensemble(run, &observed)?;
        Ok(Self { observed, heatmap, ensemble })
    }

    pub fn labels(&self) -> &Labels {
        self.observed.labels()
    }

    pub fn evaluate(&self, query: &QuerySpec) -> Result<ReportDocument, ReliabilityError> {
        let resolved = query.resolve(self.labels())?;
        let report = evaluate_query(&self.ensemble, &self.observed.codes, &resolved)?;
        Ok(ReportDocument::new(&report, self.labels()))
    }
}

/// Evaluates every query in `queries` against the run's ensemble, writes
/// `reliability/report_NNN.json`, and returns the reports.
pub fn run_reliability(run: &Path, queries: &Path) -> Result<Vec<ReportDocument>, PipelineError> {
    let specs = parse_queries(&read(queries)?)?;
    let observed = ObservedArtifacts::load(run)?;
    let ensemble = load_ensemble(run, &observed)?;
    let docs = specs
        .iter()
        .map(|spec| {
            let report = evaluate_query(&ensemble, &observed.codes, &spec.resolve(observed.labels())?)?;
            Ok(ReportDocument::new(&report, observed.labels()))
        })
        .collect::<Result<Vec<_>, ReliabilityError>>()?;
    let dir = run.join("reliability");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    create_dir(&dir)?;
    for (i, doc) in docs.iter().enumerate() {
        write(&dir.join(format!("report_{:03}.json", i + 1)), doc.to_json())?;
    }
    let mut manifest = Manifest::new("reliability", &observed.manifest.config);
    manifest.ensemble = Some(ensemble.config().clone());
    manifest.write(&dir)?;
    Ok(docs)
}
