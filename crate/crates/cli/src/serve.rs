//! Read-only HTTP service over two endpoint checkpoints and a dataset.
//!
//! * `GET /api/meta`
//! * `GET /api/slices/{i}/groundtruth?format=png|raw`
//! * `GET /api/recon?slice=i&alpha=a&format=png|raw&metrics=1`
//!
//! Images are magnitudes. PNG is 8-bit grayscale on the window
//! `[0, ground-truth max]`; raw is row-major little-endian `f32` with the
//! grid in `X-Image-Height` / `X-Image-Width`. Reconstructions carry their
//! metrics as JSON in `X-Recon-Metrics`; `metrics=1` returns that JSON as
//! the body instead of the image.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use mrinterp::dataset::{read_dataset, Dataset, SliceRecord};
use mrinterp::interp::{check_alpha, interpolate_pair, load_checkpoint, validate_compatibility, InterpSource, ModelCheckpoint};
use mrinterp::losses::Magnitude;
use mrinterp::metrics::{foreground_for, MetricsConfig, SliceMetrics};
use mrinterp::mri::ComplexImage;
use mrinterp::trainer::ModelReconstructor;
use mrinterp::{Error, Result};

use crate::image::{encode_png, encode_raw};

pub const CACHE_CAPACITY: usize = 32;

struct ModelCache {
    entries: VecDeque<(u64, Arc<ModelReconstructor>)>,
}

impl ModelCache {
    fn get(&mut self, key: u64) -> Option<Arc<ModelReconstructor>> {
        let pos = self.entries.iter().position(|(k, _)| *k == key)?;
        let entry = self.entries.remove(pos).expect("position is valid");
        let model = entry.1.clone();
        self.entries.push_back(entry);
        Some(model)
    }

    fn insert(&mut self, key: u64, model: Arc<ModelReconstructor>) {
        if self.entries.iter().any(|(k, _)| *k == key) {
            return;
        }
        if self.entries.len() == CACHE_CAPACITY {
            self.entries.pop_front();
        }
        self.entries.push_back((key, model));
    }
}

pub struct ServeState {
    sn: ModelCheckpoint,
    gan: ModelCheckpoint,
    labels: [String; 2],
    dataset: Dataset,
    acceleration: f64,
    af_index: usize,
    metrics: MetricsConfig,
    cache: Mutex<ModelCache>,
}

impl ServeState {
    pub fn new(
        sn: ModelCheckpoint,
        gan: ModelCheckpoint,
        labels: [String; 2],
        dataset: Dataset,
        acceleration: f64,
        metrics: MetricsConfig,
    ) -> Result<Self> {
        validate_compatibility(&sn, &gan).map_err(Error::Incompatible)?;
        let config = sn.config()?;
        let m = dataset.manifest();
        if (config.height, config.width, config.coils) != (m.height, m.width, m.coils) {
            return Err(Error::Dimension(format!(
                "checkpoints expect {}x{} with {} coils, dataset has {}x{} with {} coils",
                config.height, config.width, config.coils, m.height, m.width, m.coils
            )));
        }
        if dataset.validation().is_empty() {
            return Err(Error::Config("dataset has no validation slices to serve".into()));
        }
        let af_index = dataset.af_index(acceleration)?;
        Ok(ServeState {
            sn,
            gan,
            labels,
            dataset,
            acceleration,
            af_index,
            metrics,
            cache: Mutex::new(ModelCache {
                entries: VecDeque::with_capacity(CACHE_CAPACITY),
            }),
        })
    }

    pub fn load(sn: &Path, gan: &Path, dataset: &Path, acceleration: f64, metrics: MetricsConfig) -> Result<Self> {
        let labels = [crate::commands::label(sn), crate::commands::label(gan)];
        Self::new(
            load_checkpoint(sn)?,
            load_checkpoint(gan)?,
            labels,
            read_dataset(dataset)?,
            acceleration,
            metrics,
        )
    }

    fn slice(&self, i: usize) -> Option<&SliceRecord> {
        self.dataset.validation().get(i)
    }

    pub fn cached_models(&self) -> usize {
        self.cache.lock().expect("cache lock").entries.len()
    }

    fn model(&self, alpha: f64) -> Result<Arc<ModelReconstructor>> {
        let key = alpha.to_bits();
        if let Some(m) = self.cache.lock().expect("cache lock").get(key) {
            return Ok(m);
        }
        let ckpt = interpolate_pair(
            InterpSource {
                label: &self.labels[0],
                checkpoint: &self.sn,
            },
            InterpSource {
                label: &self.labels[1],
                checkpoint: &self.gan,
            },
            alpha,
            false,
        )?;
        let model = Arc::new(ModelReconstructor::from_checkpoint(format!("alpha={alpha}"), &ckpt)?);
        self.cache.lock().expect("cache lock").insert(key, model.clone());
        Ok(model)
    }

    /// Reconstruction of validation slice `i` at `alpha` and its metrics.
    pub fn reconstruct(&self, i: usize, alpha: f64) -> Result<(ComplexImage, SliceMetrics)> {
        check_alpha(alpha, false)?;
        let slice = self
            .slice(i)
            .ok_or_else(|| Error::Config(format!("slice {i} out of range")))?;
        let image = self.model(alpha)?.reconstruct_acquisition(&slice.acquisition(self.af_index))?;
        let metrics = SliceMetrics::compute(&image, &slice.ground_truth, &foreground_for(slice, &self.metrics), &self.metrics)?;
        Ok((image, metrics))
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub label: String,
    pub tag: String,
    pub descriptor: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Meta {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub accelerations: Vec<f64>,
    pub acceleration: f64,
    /// Model at α = 0 and α = 1.
    pub models: [ModelInfo; 2],
    pub endpoint_labels: [String; 2],
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Png,
    Raw,
}

#[derive(Debug, Deserialize)]
pub struct ImageQuery {
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Deserialize)]
pub struct ReconQuery {
    pub slice: usize,
    pub alpha: f64,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub metrics: Option<u8>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Coefficients(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn endpoint_label(alpha: f64) -> String {
    if alpha == 0.0 {
        "SN".into()
    } else if alpha == 1.0 {
        "SN-GAN".into()
    } else {
        format!("interp(alpha={alpha})")
    }
}

fn image_response(values: &[f64], height: usize, width: usize, window: f64, format: Format, mut headers: HeaderMap) -> Response {
    let body = match format {
        Format::Png => {
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
            encode_png(values, height, width, window)
        }
        Format::Raw => {
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
            encode_raw(values)
        }
    };
    headers.insert("x-image-height", height.into());
    headers.insert("x-image-width", width.into());
    (headers, body).into_response()
}

async fn meta(State(state): State<Arc<ServeState>>) -> Json<Meta> {
    let m = state.dataset.manifest();
    let info = |label: &str, c: &ModelCheckpoint| ModelInfo {
        label: label.to_string(),
        tag: c.tag().to_string(),
        descriptor: c.descriptor().to_string(),
    };
    Json(Meta {
        slices: state.dataset.validation().len(),
        height: m.height,
        width: m.width,
        coils: m.coils,
        accelerations: m.accelerations.clone(),
        acceleration: state.acceleration,
        models: [info(&state.labels[0], &state.sn), info(&state.labels[1], &state.gan)],
        endpoint_labels: [endpoint_label(0.0), endpoint_label(1.0)],
    })
}

async fn groundtruth(
    State(state): State<Arc<ServeState>>,
    UrlPath(i): UrlPath<usize>,
    Query(q): Query<ImageQuery>,
) -> Result<Response, ApiError> {
    let slice = state
        .slice(i)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("slice {i} out of range")))?;
    let mag = Magnitude::of(&slice.ground_truth);
    Ok(image_response(&mag.data, mag.height, mag.width, mag.max(), q.format, HeaderMap::new()))
}

async fn recon(State(state): State<Arc<ServeState>>, Query(q): Query<ReconQuery>) -> Result<Response, ApiError> {
    if state.slice(q.slice).is_none() {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("slice {} out of range", q.slice)));
    }
    check_alpha(q.alpha, false)?;
    let worker = state.clone();
    let (image, metrics) = tokio::task::spawn_blocking(move || worker.reconstruct(q.slice, q.alpha))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let metrics_json = serde_json::to_string(&metrics).expect("metrics serialize");
    if q.metrics.unwrap_or(0) != 0 {
        return Ok((
            [(header::CONTENT_TYPE, "application/json")],
            metrics_json,
        )
            .into_response());
    }
    let mut headers = HeaderMap::new();
    headers.insert("x-recon-metrics", HeaderValue::from_str(&metrics_json).expect("ASCII JSON"));
    headers.insert(
        "x-model-label",
        HeaderValue::from_str(&endpoint_label(q.alpha)).expect("ASCII label"),
    );
    let mag = Magnitude::of(&image);
    let window = Magnitude::of(&state.slice(q.slice).expect("checked above").ground_truth).max();
    Ok(image_response(&mag.data, mag.height, mag.width, window, q.format, headers))
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/slices/{i}/groundtruth", get(groundtruth))
        .route("/api/recon", get(recon))
        .with_state(state)
}

pub async fn serve(state: Arc<ServeState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
