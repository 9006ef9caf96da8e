use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

use super::network::{adam_step, AdamState, ModelDims, ModelParams};
use super::LearnerError;
use crate::losses::{total_loss, LossBreakdown, LossTargets, Stage};
use crate::metrics::{acc_pi6, med_err, median, top1_acc, PredictionRecord};
use crate::retrieval::{EmbeddingPair, ShapeDatabase, ShapeEntry};
use crate::rotation::{random_rotation, RotationMatrix, SixDRep};
use crate::so3_grid::{
    decode_pose, delta_for_bin, soft_labels, PoseCode, RotationBinTable, SoftLabelVector,
};
use crate::translation::{TranslationBinTable, TranslationCode, DEFAULT_DIVISIONS, DEFAULT_RANGES};
use crate::voxel::{
    make_synthetic_shape, render_shaded, voxelize_mesh_in_frame, GridFrame, RasterView, ShapeKind,
    ShapeSpec, TriangleMesh,
};

pub const TRAJECTORY_CSV_HEADER: &str = "stage,epoch,embed,cls,bin_r,delta_r,bin_t,delta_t,total";
pub const SHAPE_CATEGORY: &str = "blocks";
const MAX_SHAPES: usize = 32;

/// Per-stage training settings. In config JSON a stage object replaces the
/// default wholesale, so every field except `depth` and `lr_final` is
/// required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub hidden: usize,
    /// Hidden layers in the backbone.
    #[serde(default = "one")]
    pub depth: usize,
    pub epochs: usize,
    /// Training samples per epoch.
    pub samples: usize,
    /// Draw fresh samples every epoch instead of reusing one fixed set.
    pub resample: bool,
    /// Epochs each drawn sample set is trained on before the next is drawn.
    #[serde(default = "one")]
    pub sample_reuse: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-anneals the learning rate from `lr` down to this value over
    /// the run; constant `lr` when absent.
    #[serde(default)]
    pub lr_final: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub num_shapes: usize,
    pub rot_bins: usize,
    /// Monte-Carlo samples for the bin table's covering radius.
    pub covering_samples: usize,
    pub alpha: f64,
    /// Soft-label radius in degrees; the bin spacing when absent.
    pub beta_deg: Option<f64>,
    pub voxel_resolution: usize,
    pub pool_factor: usize,
    pub raster_resolution: usize,
    pub shape_dim: usize,
    pub pose_dim: usize,
    pub translation_ranges: [[f64; 2]; 3],
    pub translation_divisions: [usize; 3],
    /// Held-out samples for each stage's evaluation.
    pub heldout: usize,
    pub probe_pairs: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_shapes: 8,
            rot_bins: 8,
            covering_samples: 100_000,
            alpha: crate::so3_grid::DEFAULT_ALPHA,
            beta_deg: None,
            voxel_resolution: 32,
            pool_factor: 2,
            raster_resolution: 16,
            shape_dim: 16,
            pose_dim: 16,
            translation_ranges: DEFAULT_RANGES,
            translation_divisions: DEFAULT_DIVISIONS,
            heldout: 1000,
            probe_pairs: 500,
            stage1: StageConfig {
                hidden: 256,
                depth: 1,
                epochs: 60,
                samples: 4096,
                resample: true,
                sample_reuse: 1,
                batch_size: 64,
                lr: 1e-3,
                lr_final: None,
            },
            stage2: StageConfig {
                hidden: 512,
                depth: 2,
                epochs: 320,
                samples: 2000,
                resample: true,
                sample_reuse: 2,
                batch_size: 64,
                lr: 2e-3,
                lr_final: None,
            },
        }
    }
}

fn config_error(msg: impl Into<String>) -> LearnerError {
    LearnerError::ConfigError(msg.into())
}

impl StageConfig {
    pub fn lr_epoch(&self, epoch: usize) -> f64 {
        match self.lr_final {
            None => self.lr,
            Some(f) => {
                let progress = epoch as f64 / self.epochs as f64;
                f + (self.lr - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    fn validate(&self, name: &str) -> Result<(), LearnerError> {
        if [
            self.hidden,
            self.depth,
            self.epochs,
            self.samples,
            self.sample_reuse,
            self.batch_size,
        ]
        .contains(&0)
        {
            return Err(config_error(format!(
                "{name}: hidden, depth, epochs, samples, sample_reuse and batch_size must be positive"
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_error(format!("{name}: lr must be positive")));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0 && f <= self.lr) {
                return Err(config_error(format!("{name}: lr_final must be in (0, lr]")));
            }
        }
        Ok(())
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(4..=MAX_SHAPES).contains(&self.num_shapes) {
            return Err(config_error(format!(
                "num_shapes must be in 4..={MAX_SHAPES}"
            )));
        }
        if self.rot_bins == 0 || self.rot_bins > crate::so3_grid::max_bin_count() {
            return Err(config_error("rot_bins out of range"));
        }
        if self.covering_samples == 0 || self.heldout == 0 || self.probe_pairs == 0 {
            return Err(config_error(
                "covering_samples, heldout and probe_pairs must be positive",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_error("alpha must be in (0, 1)"));
        }
        if let Some(b) = self.beta_deg {
            if !(b > 0.0 && b <= 180.0) {
                return Err(config_error("beta_deg must be in (0, 180]"));
            }
        }
        if self.voxel_resolution < 4
            || self.pool_factor == 0
            || !self.voxel_resolution.is_multiple_of(self.pool_factor)
        {
            return Err(config_error(
                "voxel_resolution must be >= 4 and divisible by pool_factor",
            ));
        }
        if self.raster_resolution < 4 || self.shape_dim == 0 || self.pose_dim == 0 {
            return Err(config_error(
                "raster_resolution >= 4 and positive embedding dims required",
            ));
        }
        TranslationBinTable::new(self.translation_ranges, self.translation_divisions)
            .map_err(|e| config_error(e.to_string()))?;
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")
    }

    pub fn from_json(s: &str) -> Result<Self, LearnerError> {
        let c: Self = serde_json::from_str(s).map_err(|e| config_error(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// Box assemblies with distinct structure. None has a rotational or mirror
/// symmetry, so pose is well defined from voxels and from renders, and
/// no two are rotations of each other. Past the eighth, shapes repeat with
/// a stretch along x.
pub fn default_shape_specs(n: usize) -> Vec<ShapeSpec> {
    const BASE: [&[f64]; 8] = [
        // bracket
        &[
            0.0, 0.0, 0.0, 1.0, 0.25, 0.45, 0.0, 0.25, 0.0, 0.35, 1.0, 0.25,
        ],
        // tripod with unequal arms
        &[
            0.0, 0.0, 0.0, 1.0, 0.25, 0.25, 0.0, 0.25, 0.0, 0.25, 0.7, 0.25, 0.0, 0.0, 0.25, 0.25,
            0.25, 0.5,
        ],
        // zig-zag
        &[
            0.0, 0.0, 0.0, 1.0, 0.25, 0.25, 0.75, 0.25, 0.0, 1.0, 0.6, 0.25, 0.75, 0.35, 0.25, 1.0,
            0.6, 0.5,
        ],
        // offset tee
        &[
            0.0, 0.0, 0.0, 1.0, 0.25, 0.3, 0.2, 0.25, 0.0, 0.45, 0.8, 0.5,
        ],
        // steps
        &[
            0.0, 0.0, 0.0, 1.0, 0.25, 0.6, 0.0, 0.25, 0.0, 0.6, 0.5, 0.4, 0.0, 0.5, 0.0, 0.3, 0.75,
            0.2,
        ],
        // plate with post
        &[
            0.0, 0.0, 0.0, 1.0, 0.15, 0.6, 0.65, 0.15, 0.05, 0.9, 0.9, 0.3,
        ],
        // hook
        &[
            0.0, 0.0, 0.0, 0.25, 1.0, 0.25, 0.25, 0.75, 0.0, 0.7, 1.0, 0.25, 0.45, 0.75, 0.25, 0.7,
            1.0, 0.6,
        ],
        // skewed cross
        &[
            0.0, 0.3, 0.0, 1.0, 0.55, 0.25, 0.6, 0.0, 0.0, 0.85, 0.3, 0.25, 0.2, 0.55, 0.0, 0.45,
            0.9, 0.45,
        ],
    ];
    (0..n)
        .map(|i| {
            let stretch = 1.0 + 0.15 * (i / BASE.len()) as f64;
            let mut p = BASE[i % BASE.len()].to_vec();
            for b in p.chunks_exact_mut(6) {
                b[0] *= stretch;
                b[3] *= stretch;
            }
            ShapeSpec::new(ShapeKind::Blocks, &p)
        })
        .collect()
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

// Stream tags; the low 32 bits carry the epoch where relevant.
const INIT1: u64 = 1 << 32;
const DATA1: u64 = 2 << 32;
const SHUFFLE1: u64 = 3 << 32;
const EVAL1: u64 = 4 << 32;
const PROBE: u64 = 5 << 32;
const INIT2: u64 = 6 << 32;
const DATA2: u64 = 7 << 32;
const SHUFFLE2: u64 = 8 << 32;
const EVAL2: u64 = 9 << 32;
const DATABASE: u64 = 10 << 32;

const DATABASE_VIEWS: usize = 64;

/// Maps a translation to the toy camera: the object is drawn at a scale that
/// shrinks linearly with depth and offset in the image plane in proportion
/// to its normalized `(x, y)`. Returns `(scale, [offset_u, offset_v])` in
/// window half-widths.
pub fn camera_for_translation(t: [f64; 3], ranges: &[[f64; 2]; 3]) -> (f64, [f64; 2]) {
    let norm = |a: usize| (t[a] - ranges[a][0]) / (ranges[a][1] - ranges[a][0]);
    let scale = 0.75 - 0.45 * norm(2);
    (
        scale,
        [0.25 * (2.0 * norm(0) - 1.0), 0.25 * (2.0 * norm(1) - 1.0)],
    )
}

// Relative padding around the object inside its crop.
const CROP_MARGIN: f64 = 0.1;
// Brings the crop-box inputs to roughly unit scale next to the pixels.
const CROP_FEATURE_GAIN: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    /// Row-major `res × res` shaded render of the crop.
    pub image: Vec<f64>,
    /// Crop box center and side length in window coordinates (`[-1, 1]²`).
    pub crop_center: [f64; 2],
    pub crop_size: f64,
    /// Projected bounding-box area in full-window pixels².
    pub bbox_area: f64,
    /// Whether the object extends past the window.
    pub truncated: bool,
}

impl CameraView {
    /// Image pixels followed by the scaled crop box.
    pub fn network_input(&self) -> Vec<f64> {
        let mut v = self.image.clone();
        v.extend(
            [self.crop_center[0], self.crop_center[1], self.crop_size]
                .map(|x| x * CROP_FEATURE_GAIN),
        );
        v
    }
}

/// The procedural world both stages train on: normalized shapes, bin
/// tables and the fixed voxel frame.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyConfig,
    pub shape_ids: Vec<String>,
    /// Meshes centered on their bounding box with bounding radius 1.
    pub meshes: Vec<TriangleMesh>,
    pub rot_table: RotationBinTable,
    pub trans_table: TranslationBinTable,
    /// Soft-label radius in radians.
    pub beta: f64,
    frame: GridFrame,
}

struct Sample {
    input: Vec<f64>,
    targets: LossTargets,
    shape: usize,
    rotation: RotationMatrix,
    translation: [f64; 3],
    bbox_area: f64,
    truncated: bool,
}

impl ToyWorld {
    pub fn new(config: &ToyConfig, seed: u64) -> Result<Self, LearnerError> {
        config.validate()?;
        let mut meshes = Vec::new();
        for spec in default_shape_specs(config.num_shapes) {
            let m = make_synthetic_shape(&spec, seed).map_err(|e| config_error(e.to_string()))?;
            let radius = m
                .vertices
                .iter()
                .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            meshes.push(m.scaled([1.0 / radius; 3]));
        }
        let rot_table =
            RotationBinTable::generate_with_samples(config.rot_bins, seed, config.covering_samples)
                .map_err(|e| config_error(e.to_string()))?;
        let trans_table =
            TranslationBinTable::new(config.translation_ranges, config.translation_divisions)
                .map_err(|e| config_error(e.to_string()))?;
        // A single bin has no spacing; any radius then only activates it.
        let beta = config
            .beta_deg
            .map(f64::to_radians)
            .unwrap_or(rot_table.spacing)
            .max(f64::MIN_POSITIVE);
        let frame = GridFrame::fit_sphere([0.0; 3], 1.0, config.voxel_resolution)
            .expect("unit sphere frame");
        Ok(Self {
            config: config.clone(),
            shape_ids: (0..config.num_shapes)
                .map(|i| format!("shape_{i:02}"))
                .collect(),
            meshes,
            rot_table,
            trans_table,
            beta,
            frame,
        })
    }

    pub fn num_shapes(&self) -> usize {
        self.meshes.len()
    }

    /// Pooled occupancy of shape `shape` rotated by `r` about its center.
    pub fn voxel_input(&self, shape: usize, r: &RotationMatrix) -> Vec<f64> {
        let mesh = self.meshes[shape].transformed(r, [0.0; 3]);
        let grid = voxelize_mesh_in_frame(&mesh, self.config.voxel_resolution, &self.frame)
            .expect("generated meshes are valid");
        grid.average_pool(self.config.pool_factor)
    }

    /// What the toy camera sees of shape `shape` at rotation `r` and
    /// translation `t`: a shaded render of the object's bounding-box crop plus
    /// the crop box in window coordinates.
    pub fn camera_view(&self, shape: usize, r: &RotationMatrix, t: [f64; 3]) -> CameraView {
        let (scale, offset) = camera_for_translation(t, &self.trans_table.ranges);
        let mut mesh = self.meshes[shape]
            .transformed(r, [0.0; 3])
            .scaled([scale; 3]);
        for v in &mut mesh.vertices {
            v[0] += offset[0];
            v[1] += offset[1];
        }
        let (lo, hi) = mesh.bounds();
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let size = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let res = self.config.raster_resolution;
        let view = RasterView {
            resolution: res,
            center,
            pixel_size: size * (1.0 + CROP_MARGIN) / res as f64,
        };
        let window_px = res as f64 / 2.0;
        CameraView {
            image: render_shaded(&mesh, &view),
            crop_center: center,
            crop_size: size,
            bbox_area: (hi[0] - lo[0]) * (hi[1] - lo[1]) * window_px * window_px,
            truncated: lo[0] < -1.0 || lo[1] < -1.0 || hi[0] > 1.0 || hi[1] > 1.0,
        }
    }

    pub fn stage1_dims(&self) -> ModelDims {
        let side = self.config.voxel_resolution / self.config.pool_factor;
        ModelDims {
            input: side * side * side,
            hidden: self.config.stage1.hidden,
            depth: self.config.stage1.depth,
            classes: self.num_shapes(),
            shape_dim: self.config.shape_dim,
            pose_dim: self.config.pose_dim,
            rot_bins: self.rot_table.len(),
            trans_bins: 0,
        }
    }

    pub fn stage2_dims(&self) -> ModelDims {
        let res = self.config.raster_resolution;
        ModelDims {
            input: res * res + 3,
            hidden: self.config.stage2.hidden,
            depth: self.config.stage2.depth,
            trans_bins: self.trans_table.len(),
            ..self.stage1_dims()
        }
    }

    fn rotation_targets(&self, r: &RotationMatrix) -> (SoftLabelVector, Vec<RotationMatrix>) {
        let labels = soft_labels(r, &self.rot_table, self.config.alpha, self.beta)
            .expect("validated parameters");
        let deltas = self
            .rot_table
            .bins
            .iter()
            .map(|b| delta_for_bin(b, r))
            .collect();
        (labels, deltas)
    }

    fn stage1_samples(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
        (0..count)
            .map(|k| {
                let shape = k % self.num_shapes();
                let rotation = random_rotation(rng);
                let (rot_labels, rot_delta_targets) = self.rotation_targets(&rotation);
                Sample {
                    input: self.voxel_input(shape, &rotation),
                    targets: LossTargets {
                        class: shape,
                        rot_labels,
                        rot_delta_targets,
                        trans_bin: 0,
                        trans_delta: [0.0; 3],
                        embedding: None,
                    },
                    shape,
                    rotation,
                    translation: [0.0; 3],
                    bbox_area: 0.0,
                    truncated: false,
                }
            })
            .collect()
    }

    fn stage2_samples(
        &self,
        stage1: &ModelParams,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Sample> {
        let mut samples = Vec::with_capacity(count);
        let mut voxels = Vec::with_capacity(count);
        for k in 0..count {
            let shape = k % self.num_shapes();
            let rotation = random_rotation(rng);
            let ranges = self.trans_table.ranges;
            let translation: [f64; 3] =
                std::array::from_fn(|a| rng.random_range(ranges[a][0]..ranges[a][1]));
            let (code, _) = self.trans_table.encode(translation);
            let (rot_labels, rot_delta_targets) = self.rotation_targets(&rotation);
            let view = self.camera_view(shape, &rotation, translation);
            voxels.push(self.voxel_input(shape, &rotation));
            samples.push(Sample {
                input: view.network_input(),
                targets: LossTargets {
                    class: shape,
                    rot_labels,
                    rot_delta_targets,
                    trans_bin: code.bin_index,
                    trans_delta: code.delta,
                    embedding: None,
                },
                shape,
                rotation,
                translation,
                bbox_area: view.bbox_area,
                truncated: view.truncated,
            });
        }
        // The embedding target is the Stage I embedding of the same shape in
        // the same rotation.
        for (chunk, vox) in samples.chunks_mut(256).zip(voxels.chunks(256)) {
            for (s, e) in chunk.iter_mut().zip(embed(stage1, vox)) {
                s.targets.embedding = Some(e);
            }
        }
        samples
    }

    /// Database of shape embeddings. Each entry is the mean shape half over
    /// the identity and `DATABASE_VIEWS − 1` random rotations, so no single
    /// view stands in for the shape.
    pub fn build_database(&self, stage1: &ModelParams, seed: u64) -> ShapeDatabase {
        let mut rng = stream(seed, DATABASE);
        let views: Vec<RotationMatrix> = std::iter::once(RotationMatrix::identity())
            .chain((1..DATABASE_VIEWS).map(|_| random_rotation(&mut rng)))
            .collect();
        let entries = (0..self.num_shapes()).zip(&self.shape_ids).map(|(s, id)| {
            let inputs: Vec<Vec<f64>> = views.iter().map(|r| self.voxel_input(s, r)).collect();
            let mut vec = vec![0.0; stage1.dims.shape_dim];
            for e in embed(stage1, &inputs) {
                vec.iter_mut()
                    .zip(&e.shape)
                    .for_each(|(m, x)| *m += x / views.len() as f64);
            }
            ShapeEntry {
                id: id.clone(),
                category: SHAPE_CATEGORY.into(),
                vec,
            }
        });
        ShapeDatabase::build(stage1.dims.shape_dim, entries)
            .expect("distinct ids, finite embeddings")
    }

    /// Decodes the rotation from the arg-max bin and its predicted delta.
    fn decode_rotation(&self, rot_logits: &[f64], deltas: &[[f64; 6]]) -> RotationMatrix {
        let k = argmax(rot_logits);
        let bin = &self.rot_table.bins[k];
        let delta = SixDRep::from_slice(&deltas[k])
            .and_then(|d| d.to_rotation())
            // A degenerate output falls back to the bin center.
            .unwrap_or_else(|_| delta_for_bin(bin, bin));
        decode_pose(
            &PoseCode {
                bin_index: k,
                delta,
            },
            &self.rot_table,
        )
        .expect("bin index in range")
    }
}

fn batch_matrix(inputs: &[&[f64]]) -> Array2<f64> {
    let cols = inputs.first().map_or(0, |r| r.len());
    Array2::from_shape_vec((inputs.len(), cols), inputs.concat()).expect("equal input lengths")
}

/// Embeddings of a batch of inputs.
pub(crate) fn embed(model: &ModelParams, inputs: &[Vec<f64>]) -> Vec<EmbeddingPair> {
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let act = model.forward(batch_matrix(&refs).view());
    (0..inputs.len())
        .map(|i| act.head_outputs(i, &model.dims).embedding)
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.stage, self.epoch, self.loss.csv_row())
    }
}

/// Sample set for each epoch: set `epoch / sample_reuse` when resampling,
/// else set 0 throughout. `draw` builds a set from its index.
fn sample_source<'a>(
    cfg: &'a StageConfig,
    draw: impl Fn(u64) -> Vec<Sample> + 'a,
) -> impl FnMut(usize) -> Rc<Vec<Sample>> + 'a {
    let mut current: Option<(u64, Rc<Vec<Sample>>)> = None;
    move |epoch| {
        let set = if cfg.resample {
            (epoch / cfg.sample_reuse) as u64
        } else {
            0
        };
        match &current {
            Some((k, s)) if *k == set => s.clone(),
            _ => {
                let s = Rc::new(draw(set));
                current = Some((set, s.clone()));
                s
            }
        }
    }
}

fn train(
    model: &mut ModelParams,
    stage: Stage,
    cfg: &StageConfig,
    seed: u64,
    shuffle_tag: u64,
    mut samples_for_epoch: impl FnMut(usize) -> Rc<Vec<Sample>>,
) -> Result<Vec<EpochRecord>, LearnerError> {
    let mut adam = AdamState::new(model.values.len());
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let samples = samples_for_epoch(epoch);
        let lr = cfg.lr_epoch(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(seed, shuffle_tag + epoch as u64));
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| samples[i].input.as_slice()).collect();
            let x = batch_matrix(&inputs);
            let act = model.forward(x.view());
            let mut g = super::Activations::zeros_like(&act);
            let scale = 1.0 / batch.len() as f64;
            for (row, &i) in batch.iter().enumerate() {
                let (b, grad) = total_loss(
                    &act.head_outputs(row, &model.dims),
                    &samples[i].targets,
                    stage,
                )?;
                g.set_row(row, &grad, scale);
                sum.add(&b);
            }
            let grads = model.backward(x.view(), &act, &g);
            adam_step(&mut model.values, &grads, &mut adam, lr)?;
        }
        sum.scale(1.0 / samples.len() as f64);
        records.push(EpochRecord {
            stage: if stage == Stage::One { 1 } else { 2 },
            epoch,
            loss: sum,
        });
    }
    model.validate()?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Fraction of same-rotation, different-shape pairs whose arg-max
    /// rotation bin agrees.
    pub bin_stability: f64,
    /// Fraction of same-shape, different-rotation pairs that retrieve the
    /// same shape id.
    pub retrieval_stability: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub model: ModelParams,
    pub database: ShapeDatabase,
    pub trajectory: Vec<EpochRecord>,
    /// Class accuracy on held-out rotations.
    pub heldout_cls_acc: f64,
    /// Retrieval accuracy of the shape half on held-out rotations.
    pub heldout_top1: f64,
    /// Median decoded rotation error (degrees) on held-out rotations.
    pub heldout_med_err_deg: f64,
    pub heldout_records: Vec<PredictionRecord>,
    pub probe: ProbeResult,
}

impl Stage1Result {
    /// What Stage II needs from a reloaded Stage I run; the held-out fields
    /// are left empty.
    pub fn from_checkpoint(model: ModelParams, database: ShapeDatabase) -> Self {
        Self {
            model,
            database,
            trajectory: vec![],
            heldout_cls_acc: f64::NAN,
            heldout_top1: f64::NAN,
            heldout_med_err_deg: f64::NAN,
            heldout_records: vec![],
            probe: ProbeResult {
                bin_stability: f64::NAN,
                retrieval_stability: f64::NAN,
                pairs: 0,
            },
        }
    }
}

pub fn train_stage1(world: &ToyWorld, seed: u64) -> Result<Stage1Result, LearnerError> {
    let cfg = &world.config.stage1;
    let mut model = ModelParams::init(world.stage1_dims(), &mut stream(seed, INIT1));
    let source = sample_source(cfg, |set| {
        world.stage1_samples(cfg.samples, &mut stream(seed, DATA1 + set))
    });
    let trajectory = train(&mut model, Stage::One, cfg, seed, SHUFFLE1, source)?;
    let database = world.build_database(&model, seed);

    let heldout = world.stage1_samples(world.config.heldout, &mut stream(seed, EVAL1));
    let mut records = Vec::with_capacity(heldout.len());
    let mut cls_hits = 0;
    for chunk in heldout.chunks(64) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|s| s.input.as_slice()).collect();
        let act = model.forward(batch_matrix(&inputs).view());
        for (row, s) in chunk.iter().enumerate() {
            let out = act.head_outputs(row, &model.dims);
            cls_hits += (argmax(&out.cls_logits) == s.shape) as usize;
            let hit = database
                .nearest_shape(&out.embedding.shape)
                .expect("database matches dims");
            records.push(PredictionRecord {
                instance_id: format!("s1_{:04}", records.len()),
                pred_rotation: world.decode_rotation(&out.rot_logits, &out.rot_deltas),
                gt_rotation: s.rotation,
                pred_shape_id: hit.id.to_string(),
                gt_shape_id: world.shape_ids[s.shape].clone(),
                bbox_area: 0.0,
                occluded: false,
                truncated: false,
                category: SHAPE_CATEGORY.into(),
            });
        }
    }
    let probe = disentanglement_probe(world, &model, &database, seed);
    Ok(Stage1Result {
        heldout_cls_acc: cls_hits as f64 / heldout.len() as f64,
        heldout_top1: top1_acc(&records).expect("heldout is nonempty"),
        heldout_med_err_deg: med_err(&records).expect("heldout is nonempty"),
        heldout_records: records,
        model,
        database,
        trajectory,
        probe,
    })
}

fn disentanglement_probe(
    world: &ToyWorld,
    model: &ModelParams,
    db: &ShapeDatabase,
    seed: u64,
) -> ProbeResult {
    let mut rng = stream(seed, PROBE);
    let n = world.num_shapes();
    let pairs = world.config.probe_pairs;
    let (mut same_bin, mut same_id) = (0, 0);
    for p in 0..pairs {
        let r = random_rotation(&mut rng);
        let a = p % n;
        let b = (a + 1 + rng.random_range(0..n - 1)) % n;
        let act = model
            .forward(batch_matrix(&[&world.voxel_input(a, &r), &world.voxel_input(b, &r)]).view());
        same_bin += (argmax(&act.rot.row(0).to_vec()) == argmax(&act.rot.row(1).to_vec())) as usize;

        let (r1, r2) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let e = embed(
            model,
            &[world.voxel_input(a, &r1), world.voxel_input(a, &r2)],
        );
        let id1 = db.nearest_shape(&e[0].shape).expect("dims match").id;
        let id2 = db.nearest_shape(&e[1].shape).expect("dims match").id;
        same_id += (id1 == id2) as usize;
    }
    ProbeResult {
        bin_stability: same_bin as f64 / pairs as f64,
        retrieval_stability: same_id as f64 / pairs as f64,
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Eval {
    pub count: usize,
    pub top1_acc: f64,
    /// Arg-max accuracy of the class head.
    pub cls_acc: f64,
    /// Mean L1 distance between predicted and target shape embeddings.
    pub shape_embed_l1: f64,
    pub med_err_deg: f64,
    pub acc_pi6: f64,
    pub covering_radius_deg: f64,
    pub trans_err_mean: f64,
    pub trans_err_median: f64,
    pub cube_diagonal: f64,
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub model: ModelParams,
    pub trajectory: Vec<EpochRecord>,
    pub eval: Stage2Eval,
}

pub fn train_stage2(
    world: &ToyWorld,
    stage1: &Stage1Result,
    seed: u64,
) -> Result<Stage2Result, LearnerError> {
    let cfg = &world.config.stage2;
    let mut model = ModelParams::init(world.stage2_dims(), &mut stream(seed, INIT2));
    // Both networks read the same embedding space, so the Stage I heads are
    // a consistent starting point.
    model.copy_embedding_heads(&stage1.model)?;
    let s1 = &stage1.model;
    let source = sample_source(cfg, |set| {
        world.stage2_samples(s1, cfg.samples, &mut stream(seed, DATA2 + set))
    });
    let trajectory = train(&mut model, Stage::Two, cfg, seed, SHUFFLE2, source)?;
    let heldout = world.stage2_samples(s1, world.config.heldout, &mut stream(seed, EVAL2));
    let eval = evaluate_stage2(world, &model, &stage1.database, &heldout);
    Ok(Stage2Result {
        model,
        trajectory,
        eval,
    })
}

fn evaluate_stage2(
    world: &ToyWorld,
    model: &ModelParams,
    db: &ShapeDatabase,
    samples: &[Sample],
) -> Stage2Eval {
    let mut records = Vec::with_capacity(samples.len());
    let mut trans_errs = Vec::with_capacity(samples.len());
    let (mut cls_hits, mut shape_l1) = (0usize, 0.0);
    for chunk in samples.chunks(64) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|s| s.input.as_slice()).collect();
        let act = model.forward(batch_matrix(&inputs).view());
        for (row, s) in chunk.iter().enumerate() {
            let out = act.head_outputs(row, &model.dims);
            let hit = db
                .nearest_shape(&out.embedding.shape)
                .expect("database matches dims");
            cls_hits += (argmax(&out.cls_logits) == s.shape) as usize;
            if let Some(t) = &s.targets.embedding {
                let d = out
                    .embedding
                    .shape
                    .iter()
                    .zip(&t.shape)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
                shape_l1 += d / t.shape.len() as f64;
            }
            let j = argmax(&out.trans_logits);
            let t = world
                .trans_table
                .decode(&TranslationCode {
                    bin_index: j,
                    delta: out.trans_deltas[j],
                })
                .expect("bin index in range");
            trans_errs.push(
                (0..3)
                    .map(|a| (t[a] - s.translation[a]).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
            records.push(PredictionRecord {
                instance_id: format!("s2_{:04}", records.len()),
                pred_rotation: world.decode_rotation(&out.rot_logits, &out.rot_deltas),
                gt_rotation: s.rotation,
                pred_shape_id: hit.id.to_string(),
                gt_shape_id: world.shape_ids[s.shape].clone(),
                bbox_area: s.bbox_area,
                occluded: false,
                truncated: s.truncated,
                category: SHAPE_CATEGORY.into(),
            });
        }
    }
    Stage2Eval {
        count: records.len(),
        top1_acc: top1_acc(&records).expect("nonempty"),
        cls_acc: cls_hits as f64 / samples.len() as f64,
        shape_embed_l1: shape_l1 / samples.len() as f64,
        med_err_deg: med_err(&records).expect("nonempty"),
        acc_pi6: acc_pi6(&records).expect("nonempty"),
        covering_radius_deg: world.rot_table.covering_radius.to_degrees(),
        trans_err_mean: trans_errs.iter().sum::<f64>() / trans_errs.len() as f64,
        trans_err_median: median(&trans_errs).expect("nonempty"),
        cube_diagonal: world.trans_table.cube_diagonal(),
        records,
    }
}
