//! Python bindings: load or generate an avatar, render frames, read metrics.

use std::path::PathBuf;
use std::sync::Arc;

use gausshead_core::assets::{
    avatar_regularizer_metrics, generate_synthetic_fixture, load_asset, save_asset, validate_asset,
    RegularizerWeights,
};
use gausshead_core::{Camera, Error, FramePipeline, Renderer};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(gausshead, GaussheadError, PyException);

fn to_py(e: Error) -> PyErr {
    match &e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => PyFileNotFoundError::new_err(e.to_string()),
        Error::Parameter(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => GaussheadError::new_err(e.to_string()),
    }
}

/// An avatar with its own renderer and frame buffers.
#[pyclass(module = "gausshead")]
struct Avatar {
    avatar: gausshead_core::Avatar,
    renderer: Renderer,
    pipeline: FramePipeline,
}

impl Avatar {
    fn from_asset(asset: gausshead_core::AvatarAsset, threads: Option<usize>) -> PyResult<Self> {
        Ok(Self {
            avatar: gausshead_core::Avatar::new(Arc::new(asset)).map_err(to_py)?,
            renderer: Renderer::new(threads).map_err(to_py)?,
            pipeline: FramePipeline::new(),
        })
    }

    fn state(&self, psi: Option<Vec<f32>>, jaw: [f32; 3]) -> PyResult<gausshead_core::ExpressionState> {
        let dim = self.avatar.model().expression_dim;
        let mut psi = psi.unwrap_or_default();
        if psi.len() > dim {
            return Err(PyValueError::new_err(format!(
                "{} expression values given, the model has {dim}",
                psi.len()
            )));
        }
        psi.resize(dim, 0.0);
        self.avatar.state(&psi, jaw).map_err(to_py)
    }
}

#[pymethods]
impl Avatar {
    /// Loads an `.agav` asset.
    #[staticmethod]
    #[pyo3(signature = (path, threads=None))]
    fn load(path: PathBuf, threads: Option<usize>) -> PyResult<Self> {
        if !path.is_file() {
            return Err(PyFileNotFoundError::new_err(format!("no asset at {}", path.display())));
        }
        Self::from_asset(load_asset(path).map_err(to_py)?, threads)
    }

    /// Generates the procedural fixture in memory.
    #[staticmethod]
    #[pyo3(signature = (seed=7, resolution=64, threads=None))]
    fn fixture(seed: u64, resolution: usize, threads: Option<usize>) -> PyResult<Self> {
        let (_, asset) = generate_synthetic_fixture(seed, resolution).map_err(to_py)?;
        Self::from_asset(asset, threads)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_asset(self.avatar.asset(), path).map_err(to_py)
    }

    #[getter]
    fn gaussian_count(&self) -> usize {
        self.avatar.gaussian_count()
    }

    #[getter]
    fn expression_dim(&self) -> usize {
        self.avatar.model().expression_dim
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.avatar.asset().resolution()
    }

    /// Renders one frame and returns `height · width · 4` RGBA8 bytes.
    #[pyo3(signature = (
        psi=None, jaw=[0.0; 3], width=512, height=512,
        azimuth=0.0, elevation=0.0, distance=0.6, focal=2.0, background=[0.0; 3],
    ))]
    #[allow(clippy::too_many_arguments)]
    fn render<'py>(
        &mut self,
        py: Python<'py>,
        psi: Option<Vec<f32>>,
        jaw: [f32; 3],
        width: u32,
        height: u32,
        azimuth: f32,
        elevation: f32,
        distance: f32,
        focal: f32,
        background: [f32; 3],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let state = self.state(psi, jaw)?;
        let cam = Camera::orbit(azimuth, elevation, distance, [0.0; 3], focal, width, height);
        let Self {
            avatar,
            renderer,
            pipeline,
        } = self;
        let bytes = py
            .detach(|| {
                pipeline
                    .render(avatar, renderer, &state, &cam, background)
                    .map(|_| pipeline.frame().to_rgba8())
            })
            .map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    /// Regularizer terms at the given expression, as a dict of floats.
    #[pyo3(signature = (psi=None, jaw=[0.0; 3]))]
    fn metrics<'py>(&self, py: Python<'py>, psi: Option<Vec<f32>>, jaw: [f32; 3]) -> PyResult<Bound<'py, PyDict>> {
        let state = self.state(psi, jaw)?;
        let report = avatar_regularizer_metrics(&self.avatar, &state, RegularizerWeights::default()).map_err(to_py)?;
        let value = serde_json::to_value(&report).expect("report serializes");
        let out = PyDict::new(py);
        for (k, v) in value.as_object().expect("report is an object") {
            if let Some(f) = v.as_f64() {
                out.set_item(k, f)?;
            }
        }
        Ok(out)
    }

    /// Failed invariants as `(category, message)` pairs.
    fn validate(&self) -> Vec<(String, String)> {
        validate_asset(self.avatar.asset())
            .into_iter()
            .map(|v| (v.category, v.message))
            .collect()
    }
}

#[pymodule]
fn gausshead(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Avatar>()?;
    m.add("GaussheadError", m.py().get_type::<GaussheadError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
