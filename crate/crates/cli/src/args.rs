use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

// Every command takes a seed (recorded in output metadata even when unused)
// and an optional JSON config whose keys override the flags.

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenBinsArgs {
    /// Number of rotation bins (1 ..= 4608)
    #[arg(long)]
    pub n: usize,
    /// Haar samples for the covering-radius estimate
    #[arg(long, default_value_t = posekit_core::so3_grid::COVERING_SAMPLES)]
    pub samples: usize,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenTbinsArgs {
    /// xmin,xmax,ymin,ymax,zmin,zmax
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-0.25,1.5,-0.25,1.5,0.5,10"
    )]
    pub ranges: Vec<f64>,
    /// Cubes per axis: nx,ny,nz
    #[arg(long, value_delimiter = ',', default_value = "4,4,8")]
    pub divisions: Vec<usize>,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    Binvox,
    /// Bitset, x fastest, least significant bit first
    Raw,
}

impl GridFormat {
    pub fn name(self) -> &'static str {
        match self {
            GridFormat::Binvox => "binvox",
            GridFormat::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VoxelizeArgs {
    /// Triangulated OBJ mesh
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub res: usize,
    #[arg(long, value_enum, default_value_t = GridFormat::Binvox)]
    pub format: GridFormat,
    /// Grid file; metadata goes to `<out>.json`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RotateVoxelArgs {
    /// binvox grid to rotate
    #[arg(long)]
    pub input: PathBuf,
    /// Row-major 3×3 rotation; a seeded random rotation when neither this
    /// nor --euler is given
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rotation: Option<Vec<f64>>,
    /// azimuth,elevation,inplane in degrees
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub euler: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = GridFormat::Binvox)]
    pub format: GridFormat,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EncodePoseArgs {
    /// Bin table from gen-bins
    #[arg(long)]
    pub bins: PathBuf,
    /// Row-major 3×3 rotation
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rotation: Option<Vec<f64>>,
    /// azimuth,elevation,inplane in degrees
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub euler: Option<Vec<f64>>,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DecodePoseArgs {
    #[arg(long)]
    pub bins: PathBuf,
    /// Output of encode-pose
    #[arg(long)]
    pub code: Option<PathBuf>,
    #[arg(long)]
    pub bin: Option<usize>,
    /// Row-major 3×3 delta rotation
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub delta: Option<Vec<f64>>,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BuildDbArgs {
    /// `{id, category, vec}` entries as a JSON array or JSON lines
    #[arg(long)]
    pub entries: PathBuf,
    /// Embedding length; taken from the first entry when absent
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RetrieveArgs {
    /// A vector or a list of vectors
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainToyArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Training config (JSON); its keys override the flags below
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Where stage 2 finds the stage 1 model and database; --out-dir when absent
    #[arg(long)]
    pub stage1_dir: Option<PathBuf>,
    #[arg(long)]
    pub num_shapes: Option<usize>,
    #[arg(long)]
    pub rot_bins: Option<usize>,
    #[arg(long)]
    pub epochs1: Option<usize>,
    #[arg(long)]
    pub epochs2: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// PredictionRecord JSON lines
    #[arg(long)]
    pub pred: PathBuf,
    /// Report file; stdout when absent
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
}
