//! Run configuration: one JSON document with a section per subcommand.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use imcsnn::bench::{ConvergenceConfig, TimingConfig};
use imcsnn::hardware::{CircuitParams, MapMode, MappingConfig};
use imcsnn::network::Mode;
use imcsnn::training::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub circuit: CircuitParams,
    pub data: DataConfig,
    pub convergence: ConvergenceRun,
    pub bench: BenchRun,
    pub mapping: MappingConfig,
    pub map_modes: Vec<MapMode>,
    pub simulate: SimulateRun,
    pub gradcheck: GradcheckRun,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            circuit: CircuitParams::default(),
            data: DataConfig::default(),
            convergence: ConvergenceRun::default(),
            bench: BenchRun::default(),
            mapping: MappingConfig::default(),
            map_modes: vec![MapMode::AnnToImc, MapMode::PnnToImc],
            simulate: SimulateRun::default(),
            gradcheck: GradcheckRun::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// IDX image files (`<prefix>-images-idx3-ubyte[.gz]`).
    Idx,
    /// Iris-style CSV with four features and a label column.
    Iris,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    pub dir: PathBuf,
    pub train_prefix: String,
    pub test_prefix: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Latest input spike time of the encoding.
    pub tau_in: f64,
    pub iris_csv: PathBuf,
    pub iris_header: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Idx,
            dir: PathBuf::from("data/fashion-mnist"),
            train_prefix: "train".into(),
            test_prefix: "t10k".into(),
            n_train: 10_000,
            n_test: 2_000,
            tau_in: 1.0,
            iris_csv: PathBuf::from("data/iris.csv"),
            iris_header: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceRun {
    pub instance: ConvergenceConfig,
    pub steps: Vec<f64>,
    /// |E_rev| values at which the M sweep runs.
    pub steps_e_rev: Vec<f64>,
    pub e_rev_values: Vec<f64>,
    /// M values at which the |E_rev| sweep runs.
    pub e_rev_steps: Vec<f64>,
}

impl Default for ConvergenceRun {
    fn default() -> Self {
        Self {
            instance: ConvergenceConfig::default(),
            steps: vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0],
            steps_e_rev: vec![2.0, 4.0, 10.0],
            e_rev_values: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            e_rev_steps: vec![4.0, 8.0, 16.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchRun {
    pub timing: TimingConfig,
    pub n_in_values: Vec<usize>,
    pub dstd_m: usize,
    pub include_ttfs: bool,
    pub ttfs_n_in_values: Vec<usize>,
    pub ttfs_dstd_m: usize,
    /// Fan-in at which speedups are reported.
    pub reference_n_in: usize,
}

impl Default for BenchRun {
    fn default() -> Self {
        Self {
            timing: TimingConfig::default(),
            n_in_values: vec![100, 200, 500, 1000, 2000],
            dstd_m: 10,
            include_ttfs: true,
            ttfs_n_in_values: vec![100, 200, 500, 1000, 2000],
            ttfs_dstd_m: 20,
            reference_n_in: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateRun {
    /// Index into the mapping test split.
    pub sample: usize,
    pub samples_per_phase: usize,
}

impl Default for SimulateRun {
    fn default() -> Self {
        Self { sample: 0, samples_per_phase: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckRun {
    pub modes: Vec<Mode>,
    pub models: usize,
    pub max_attempts: u64,
    pub layer_sizes: Vec<usize>,
    pub m: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Samples whose one-sided differences disagree by more than this straddle a kink and are skipped.
    pub max_asymmetry: f64,
}

impl Default for GradcheckRun {
    fn default() -> Self {
        Self {
            modes: vec![Mode::RcSpike, Mode::Ttfs],
            models: 10,
            max_attempts: 100,
            layer_sizes: vec![6, 5, 3],
            m: 4,
            h: 1e-4,
            tolerance: 1e-5,
            max_asymmetry: 1e-3,
        }
    }
}
