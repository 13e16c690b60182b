//! Request handling behind the synthesis endpoint, independent of any HTTP
//! framework: decode, validate, generate, post-process, encode.

use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::data::{AuVector, ImageTensor, RasterImage};
use crate::error::{GathError, Result};
use crate::evaluation::Synthesizer;
use crate::networks::{ArchPreset, Generator};
use crate::postprocess::{postprocess_pipeline, PostprocessConfig, Stages};
use crate::training::{load_checkpoint, Checkpoint};

/// JSON body of `POST /synthesize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    /// Base64-encoded PNG or JPEG.
    pub portrait: String,
    pub au: Vec<f32>,
    /// Stage names, e.g. `["clahe"]`; order is ignored.
    #[serde(default)]
    pub postprocess: Vec<String>,
}

impl SynthesisRequest {
    pub fn new(png: &[u8], au: &[f32], stages: Stages) -> Self {
        SynthesisRequest {
            portrait: base64::engine::general_purpose::STANDARD.encode(png),
            au: au.to_vec(),
            postprocess: stages.names().into_iter().map(String::from).collect(),
        }
    }
}

/// Metadata served by `GET /model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub iteration: u64,
    pub arch: ArchPreset,
    pub image_side: usize,
    pub au_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub generator_checksum: String,
}

/// An immutable generator snapshot plus the post-processing defaults.
#[derive(Clone, Debug)]
pub struct Model {
    pub info: ModelInfo,
    pub generator: Generator<f32>,
    pub post: PostprocessConfig,
}

impl Model {
    pub fn from_checkpoint(ck: &Checkpoint, post: PostprocessConfig) -> Result<Self> {
        post.validate()?;
        let generator = ck.build_generator()?;
        Ok(Model {
            info: ModelInfo {
                iteration: ck.iteration,
                arch: ck.config.arch,
                image_side: ck.network.side,
                au_dim: ck.network.generator.au_dim,
                classes: ck.classes(),
                seed: ck.config.seed,
                generator_checksum: format!("{:016x}", generator.params.checksum()),
            },
            generator,
            post,
        })
    }

    pub fn load(path: &Path, post: PostprocessConfig) -> Result<Self> {
        Model::from_checkpoint(&load_checkpoint(path)?, post)
    }

    /// Resize to the model side and map to `[-1, 1]`.
    pub fn prepare(&self, raster: &RasterImage) -> ImageTensor {
        let s = self.info.image_side;
        ImageTensor::from_raster(&raster.resized(s, s))
    }

    pub fn synthesize_raster(&self, raster: &RasterImage, au: &AuVector, stages: Stages) -> Result<RasterImage> {
        let x = self.prepare(raster);
        let y = self.generator.synthesize(&x, au)?;
        postprocess_pipeline(&y, &PostprocessConfig { stages, ..self.post })
    }

    /// Decode, validate and synthesize; returns PNG bytes.
    pub fn handle(&self, req: &SynthesisRequest) -> Result<Vec<u8>> {
        let stages = Stages::from_names(req.postprocess.iter().map(String::as_str))?;
        let au = AuVector::new(req.au.clone(), self.info.au_dim)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(req.portrait.trim())
            .map_err(|e| GathError::Decode(format!("portrait is not base64: {e}")))?;
        let raster = RasterImage::decode_lenient(&bytes)?;
        Ok(self.synthesize_raster(&raster, &au, stages)?.to_png())
    }
}

/// Whether an error stems from the request rather than the server.
pub fn is_client_error(e: &GathError) -> bool {
    matches!(
        e,
        GathError::Arity { .. }
            | GathError::Range { .. }
            | GathError::Decode(_)
            | GathError::Channels(_)
            | GathError::Shape(_)
            | GathError::Config(_)
            | GathError::Precondition(_)
            | GathError::Schema(_)
            | GathError::Parse { .. }
    )
}
