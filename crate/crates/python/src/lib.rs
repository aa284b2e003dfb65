//! Python bindings: point clouds, neighbor search, the segmentation network,
//! training, sliding-window inference and metrics.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pointattn::numerics::{load_checkpoint, save_checkpoint, OptimizerConfig, ParameterStore};
use pointattn::pipeline::{self, BlockSpec, SceneRecipe, TrainSettings};
use pointattn::search::{self, SearchConfig};
use pointattn::{Error, NetworkConfig, PointCloud, SegNet, SpatialIndex};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for pointattn::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A point cloud with optional colors and labels.
#[pyclass(name = "PointCloud", module = "pointattn", from_py_object)]
#[derive(Clone)]
struct PyCloud {
    inner: PointCloud,
}

#[pymethods]
impl PyCloud {
    #[new]
    #[pyo3(signature = (positions, colors=None, labels=None))]
    fn new(positions: Vec<[f64; 3]>, colors: Option<Vec<[f64; 3]>>, labels: Option<Vec<usize>>) -> PyResult<Self> {
        Ok(Self {
            inner: PointCloud::new(positions, colors, labels).py()?,
        })
    }

    /// Loads `.xyz`, `.xyzrgb` or `.xyzrgbl` by extension.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let format = pointattn::CloudFormat::from_path(&path)
            .ok_or_else(|| PyValueError::new_err(format!("{}: unknown cloud format", path.display())))?;
        Ok(Self {
            inner: pointattn::load_cloud(&path, format).py()?,
        })
    }

    /// Writes `x y z r g b label` lines, colored by `labels`.
    fn save_labeled(&self, labels: Vec<usize>, path: std::path::PathBuf) -> PyResult<()> {
        pointattn::save_labeled_cloud(&self.inner, &labels, path).py()
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.positions().to_vec()
    }

    #[getter]
    fn colors(&self) -> Option<Vec<[f64; 3]>> {
        self.inner.colors().map(<[_]>::to_vec)
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels().map(<[_]>::to_vec)
    }

    fn __len__(&self) -> usize {
        self.inner.num_points()
    }

    fn __repr__(&self) -> String {
        format!(
            "PointCloud(points={}, colors={}, labels={})",
            self.inner.num_points(),
            self.inner.colors().is_some(),
            self.inner.labels().is_some()
        )
    }
}

/// Network hyperparameters; keys match the CLI config file.
#[pyclass(name = "NetworkConfig", module = "pointattn", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: NetworkConfig,
}

#[pymethods]
impl PyConfig {
    /// 512-point blocks.
    #[staticmethod]
    #[pyo3(signature = (num_classes=3))]
    fn desk(num_classes: usize) -> Self {
        Self {
            inner: NetworkConfig::desk(num_classes),
        }
    }

    /// 32-point blocks, for tests.
    #[staticmethod]
    #[pyo3(signature = (num_classes=3))]
    fn tiny(num_classes: usize) -> Self {
        Self {
            inner: NetworkConfig::tiny(num_classes),
        }
    }

    /// Sets one key, e.g. `cfg.set("search", "knn")`.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        if !next.set(key, value).py()? {
            return Err(PyValueError::new_err(format!("unknown network key {key:?}")));
        }
        next.validate().py()?;
        self.inner = next;
        Ok(())
    }

    fn to_kv(&self) -> String {
        self.inner.to_kv()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn num_points(&self) -> [usize; 4] {
        self.inner.num_points
    }

    fn __repr__(&self) -> String {
        format!("NetworkConfig(\n{})", self.inner.to_kv())
    }
}

fn block_spec(cfg: &NetworkConfig, footprint: f64, padding: f64, stride: Option<f64>) -> PyResult<BlockSpec> {
    let spec = BlockSpec {
        footprint,
        padding,
        points_per_block: cfg.num_points[0],
        stride: stride.unwrap_or(footprint / 2.0),
    };
    spec.validate().py()?;
    Ok(spec)
}

/// A segmentation network with its parameters.
#[pyclass(name = "Model", module = "pointattn")]
struct PyModel {
    net: SegNet,
    store: ParameterStore,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed=0))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let (net, store) = SegNet::init(config.inner.clone(), seed).py()?;
        Ok(Self { net, store })
    }

    /// Loads a checkpoint written by `save` or the CLI.
    #[staticmethod]
    fn load(path: std::path::PathBuf, config: &PyConfig) -> PyResult<Self> {
        let loaded = load_checkpoint(&path).py()?;
        let (net, store) = SegNet::from_checkpoint(config.inner.clone(), &loaded).py()?;
        Ok(Self { net, store })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        save_checkpoint(&self.store, path).py()
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.net.config().clone(),
        }
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Trains on labeled scenes; returns the mean loss of every epoch.
    #[pyo3(signature = (scenes, epochs=50, lr=1e-3, batch_size=8, seed=0, footprint=2.0, padding=0.5))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        scenes: Vec<PyCloud>,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
        footprint: f64,
        padding: f64,
    ) -> PyResult<Vec<f64>> {
        let scenes: Vec<PointCloud> = scenes.into_iter().map(|c| c.inner).collect();
        let spec = block_spec(self.net.config(), footprint, padding, None)?;
        let settings = TrainSettings {
            epochs,
            batch_size,
            optimizer: OptimizerConfig {
                lr,
                ..Default::default()
            },
            seed,
            ..Default::default()
        };
        pipeline::train_on_scenes(&self.net, &mut self.store, &scenes, &spec, &settings, |_, _, _| {}).py()
    }

    /// Labels every point with overlapping windows; returns
    /// `(labels, confidence)`.
    #[pyo3(signature = (scene, stride=None, seed=0, footprint=2.0, padding=0.5))]
    fn predict(
        &self,
        scene: &PyCloud,
        stride: Option<f64>,
        seed: u64,
        footprint: f64,
        padding: f64,
    ) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let spec = block_spec(self.net.config(), footprint, padding, stride)?;
        let pred = pipeline::sliding_window_predict(&scene.inner, &spec, &self.net, &self.store, seed).py()?;
        Ok((pred.labels, pred.confidence))
    }
}

fn index_for(positions: &[[f64; 3]], radius: f64) -> PyResult<SpatialIndex> {
    SpatialIndex::build(positions, radius).py()
}

fn rows(graph: &pointattn::NeighborGraph) -> Vec<Vec<usize>> {
    (0..graph.num_rows()).map(|r| graph.neighbors(r).to_vec()).collect()
}

/// Neighbors from 16 direction bins, `m` per bin within `radius`.
#[pyfunction]
#[pyo3(signature = (positions, centers, radius, m=1))]
fn multi_directional_search(
    positions: Vec<[f64; 3]>,
    centers: Vec<usize>,
    radius: f64,
    m: usize,
) -> PyResult<Vec<Vec<usize>>> {
    let index = index_for(&positions, radius)?;
    let cfg = SearchConfig::new(radius, m).py()?;
    Ok(rows(&search::multi_directional_search(&index, &positions, &centers, &cfg).py()?))
}

/// The `k` nearest points of each center, the center included.
#[pyfunction]
fn knn_search(positions: Vec<[f64; 3]>, centers: Vec<usize>, k: usize) -> PyResult<Vec<Vec<usize>>> {
    let index = index_for(&positions, 0.1)?;
    Ok(rows(&search::knn_search(&index, &positions, &centers, k).py()?))
}

/// The first `k` points by index within `radius` of each center.
#[pyfunction]
fn ball_query(positions: Vec<[f64; 3]>, centers: Vec<usize>, radius: f64, k: usize) -> PyResult<Vec<Vec<usize>>> {
    let index = index_for(&positions, radius)?;
    Ok(rows(&search::ball_query(&index, &positions, &centers, radius, k).py()?))
}

#[pyfunction]
#[pyo3(signature = (positions, n, seed_index=0))]
fn farthest_point_sampling(positions: Vec<[f64; 3]>, n: usize, seed_index: usize) -> PyResult<Vec<usize>> {
    search::farthest_point_sampling(&positions, n, seed_index).py()
}

/// A labeled synthetic scene: floor (0), spheres (1) and boxes (2).
#[pyfunction]
#[pyo3(signature = (seed, spheres=2, boxes=2, extent=(4.0, 4.0), density=150.0, noise=0.005))]
fn generate_scene(
    seed: u64,
    spheres: usize,
    boxes: usize,
    extent: (f64, f64),
    density: f64,
    noise: f64,
) -> PyResult<PyCloud> {
    let recipe = SceneRecipe {
        extent: [extent.0, extent.1],
        random_spheres: spheres,
        random_boxes: boxes,
        density,
        noise,
        ..Default::default()
    };
    Ok(PyCloud {
        inner: pipeline::generate_scene(&recipe, seed).py()?,
    })
}

/// Overall accuracy, mean IoU (percent) and per-class IoU (fraction, or
/// None for classes absent from both).
#[pyfunction]
fn compute_metrics(py: Python<'_>, pred: Vec<usize>, truth: Vec<usize>, num_classes: usize) -> PyResult<Py<PyAny>> {
    let m = pipeline::compute_metrics(&pred, &truth, num_classes).py()?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("overall_accuracy", m.overall_accuracy)?;
    d.set_item("mean_iou", m.mean_iou)?;
    d.set_item("class_iou", m.class_iou)?;
    Ok(d.into_any().unbind())
}

/// Runs the invariant suite; maps property name to `None` (passed) or the
/// failure message.
#[pyfunction]
#[pyo3(signature = (trials=20, seed=0))]
fn selfcheck(trials: usize, seed: u64) -> BTreeMap<&'static str, Option<String>> {
    pointattn::selfcheck::run_selfcheck(trials, seed)
        .into_iter()
        .map(|r| (r.name, r.failure))
        .collect()
}

#[pymodule]
#[pyo3(name = "pointattn")]
fn pointattn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCloud>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(multi_directional_search, m)?)?;
    m.add_function(wrap_pyfunction!(knn_search, m)?)?;
    m.add_function(wrap_pyfunction!(ball_query, m)?)?;
    m.add_function(wrap_pyfunction!(farthest_point_sampling, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    Ok(())
}
