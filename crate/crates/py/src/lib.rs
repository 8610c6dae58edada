//! Python bindings: networks in 64-bit precision, memory ledgers, the 8-bit
//! codec, optimizers and scoring utilities.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use revmem::check::mode_gradients;
use revmem::cli::{self, Command, NetSource, RunConfig, ToyConfig};
use revmem::optim::{self, DynamicTreeMap, OptimKind, Optimizer};
use revmem::rev::{self, Category, MemoryLedger, Mode, ResidualKind};
use revmem::zoo::{self, NetworkSpec, RevType};
use revmem::{Error, Param, Shape, Tensor};

create_exception!(revmem_py, RevmemError, PyException, "Error raised by the revmem core.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Shape(_) | Error::Config(_) | Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        _ => RevmemError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for revmem::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

type Dims = (usize, usize, usize, usize);

fn shape(d: Dims) -> Shape {
    Shape::new(d.0, d.1, d.2, d.3)
}

fn dims(s: Shape) -> Dims {
    let [n, c, f, t] = s.dims();
    (n, c, f, t)
}

fn ledger_dict(l: &MemoryLedger) -> BTreeMap<String, u64> {
    let mut m: BTreeMap<String, u64> = Category::ALL.iter().map(|&c| (c.name().to_string(), l.get(c))).collect();
    m.insert("transient".into(), l.transient);
    m.insert("total".into(), l.total());
    m.insert("peak".into(), l.peak());
    m
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().py()
}

/// A reversible or conventional speaker network in 64-bit precision.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: rev::Network<f64>,
}

#[pymethods]
impl PyNetwork {
    /// Builds a registry network (`name`) or a JSON spec (`spec_json`).
    #[new]
    #[pyo3(signature = (name=None, spec_json=None, seed=0))]
    fn new(name: Option<&str>, spec_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let inner = match (name, spec_json) {
            (Some(n), None) => zoo::build(n, seed).py()?,
            (None, Some(j)) => zoo::build_spec(&NetworkSpec::from_json(j).py()?, seed).py()?,
            _ => return Err(PyValueError::new_err("pass exactly one of name or spec_json")),
        };
        Ok(Self { inner })
    }

    /// Toy network of reversible stages (`rev_type` 1 or 2).
    #[staticmethod]
    #[pyo3(signature = (blocks, width=16, kind="df_bottleneck", rev_type=2, seed=0))]
    fn toy(blocks: Vec<usize>, width: usize, kind: &str, rev_type: u8, seed: u64) -> PyResult<Self> {
        let ty = match rev_type {
            1 => RevType::TypeI,
            2 => RevType::TypeII,
            _ => return Err(PyValueError::new_err("rev_type must be 1 or 2")),
        };
        let kind: ResidualKind = kind.parse().py()?;
        let spec = ToyConfig { blocks, width, kind, rev_type: ty }.spec().py()?;
        Ok(Self { inner: zoo::build_spec(&spec, seed).py()? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn rev_block_count(&self) -> usize {
        self.inner.rev_block_count()
    }

    fn input_shape(&self, batch: usize, frames: usize) -> Dims {
        dims(self.inner.input_shape(batch, frames))
    }

    fn output_shape(&self, input: Dims) -> PyResult<Dims> {
        self.inner.output_shape(shape(input)).map(dims).py()
    }

    /// Forward pass on flat row-major data; returns `(output, ledger)`.
    #[pyo3(signature = (data, input_shape, mode="reversible"))]
    fn forward(&mut self, data: Vec<f64>, input_shape: Dims, mode: &str) -> PyResult<(Vec<f64>, BTreeMap<String, u64>)> {
        let x = Tensor::from_vec(shape(input_shape), data).py()?;
        let (y, _, ledger) = rev::run_forward(&mut self.inner, &x, parse_mode(mode)?).py()?;
        Ok((y.into_vec(), ledger_dict(&ledger)))
    }

    /// Gradients of `<dy, net(x)>`: `(dx, [param grads])`, on a copy of the network.
    #[pyo3(signature = (data, input_shape, dy, mode="reversible"))]
    fn gradients(&self, data: Vec<f64>, input_shape: Dims, dy: Vec<f64>, mode: &str) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let x = Tensor::from_vec(shape(input_shape), data).py()?;
        let out = self.inner.output_shape(x.shape()).py()?;
        let dy = Tensor::from_vec(out, dy).py()?;
        let g = mode_gradients(&self.inner, &x, &dy, parse_mode(mode)?).py()?;
        Ok((g.input.into_vec(), g.params.into_iter().map(Tensor::into_vec).collect()))
    }

    /// Analytic ledger of one training step without running it.
    #[pyo3(signature = (batch, frames, mode="reversible"))]
    fn plan(&self, batch: usize, frames: usize, mode: &str) -> PyResult<BTreeMap<String, u64>> {
        let l = rev::plan(&self.inner, self.inner.input_shape(batch, frames), parse_mode(mode)?).py()?;
        Ok(ledger_dict(&l))
    }

    #[pyo3(signature = (frames, budget_bytes, mode="reversible", optimizer_state_bytes=0))]
    fn max_batch(&self, frames: usize, budget_bytes: u64, mode: &str, optimizer_state_bytes: u64) -> PyResult<usize> {
        rev::max_batch(&self.inner, frames, parse_mode(mode)?, budget_bytes, optimizer_state_bytes).py()
    }

    fn __repr__(&self) -> String {
        format!("Network({:?}, params={})", self.inner.name, self.inner.param_count())
    }
}

/// Blockwise 8-bit encoded tensor.
#[pyclass(name = "QuantizedState")]
struct PyQuantized {
    inner: optim::QuantizedState,
}

#[pymethods]
impl PyQuantized {
    #[new]
    #[pyo3(signature = (values, block_size=optim::DEFAULT_BLOCK_SIZE))]
    fn new(values: Vec<f32>, block_size: usize) -> PyResult<Self> {
        Ok(Self { inner: optim::quantize_blockwise(&values, block_size, DynamicTreeMap::shared()).py()? })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: optim::QuantizedState::from_bytes(data).py()? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    fn dequantize(&self) -> Vec<f32> {
        optim::dequantize_blockwise(&self.inner, DynamicTreeMap::shared())
    }

    #[getter]
    fn codes(&self) -> Vec<u8> {
        self.inner.codes.clone()
    }

    #[getter]
    fn absmax(&self) -> Vec<f32> {
        self.inner.absmax.clone()
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.inner.block_size
    }

    #[getter]
    fn nbytes(&self) -> u64 {
        self.inner.bytes()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Optimizer over flat parameter vectors.
#[pyclass(name = "Optimizer")]
struct PyOptimizer {
    inner: Optimizer<f64>,
    params: Vec<Param<f64>>,
}

#[pymethods]
impl PyOptimizer {
    #[new]
    #[pyo3(signature = (kind, params, lr=None, weight_decay=None, block_size=None))]
    fn new(kind: &str, params: Vec<Vec<f64>>, lr: Option<f64>, weight_decay: Option<f64>, block_size: Option<usize>) -> PyResult<Self> {
        let kind: OptimKind = kind.parse().py()?;
        let mut h = cli::default_hyper(kind);
        h.lr = lr.unwrap_or(h.lr);
        h.weight_decay = weight_decay.unwrap_or(h.weight_decay);
        h.block_size = block_size.unwrap_or(h.block_size);
        let params = params
            .into_iter()
            .map(|p| Tensor::from_vec(Shape::flat(1, p.len()), p).map(Param::new))
            .collect::<revmem::Result<_>>()
            .py()?;
        Ok(Self { inner: Optimizer::new(kind, h).py()?, params })
    }

    /// Applies one update with the given gradients and returns the new parameters.
    fn step(&mut self, grads: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        if grads.len() != self.params.len() {
            return Err(PyValueError::new_err(format!("{} gradients for {} parameters", grads.len(), self.params.len())));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.zero_grad();
            p.accumulate_slice(&g).py()?;
        }
        let mut refs: Vec<&mut Param<f64>> = self.params.iter_mut().collect();
        self.inner.step(&mut refs).py()?;
        Ok(self.params.iter().map(|p| p.value.to_f64_vec()).collect())
    }

    #[getter]
    fn state_bytes(&self) -> u64 {
        self.inner.state_bytes()
    }
}

/// `(check, max_error, tolerance, passed)` rows of the gradient-check suite on a toy network.
#[pyfunction]
#[pyo3(signature = (blocks=vec![2, 2], width=16, kind="df_bottleneck", seed=0))]
fn gradcheck(blocks: Vec<usize>, width: usize, kind: &str, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let mut cfg = RunConfig::new(Command::Gradcheck);
    let kind: ResidualKind = kind.parse().py()?;
    cfg.net = NetSource::Toy(ToyConfig { blocks, width, kind, ..ToyConfig::default() });
    cfg.seed = seed;
    let rows = cli::gradcheck::checks(&cfg).py()?;
    Ok(rows.into_iter().map(|r| { let ok = r.passed(); (r.name, r.max_error, r.tolerance, ok) }).collect())
}

/// Per-step training losses of the default toy network on synthetic speakers.
#[pyfunction]
#[pyo3(signature = (optim="adamw", steps=20, seed=0, mode="reversible", lr=None))]
fn train_toy(optim: &str, steps: usize, seed: u64, mode: &str, lr: Option<f64>) -> PyResult<Vec<f64>> {
    let kind: OptimKind = optim.parse().py()?;
    let mut cfg = RunConfig::new(Command::Train).with_optim(kind);
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.mode = Some(parse_mode(mode)?);
    if let Some(lr) = lr {
        cfg.hyper.lr = lr;
    }
    Ok(cli::train::train::<f64>(&cfg).py()?.losses())
}

#[pyfunction]
fn eer(target: Vec<f64>, nontarget: Vec<f64>) -> PyResult<f64> {
    cli::eer(&target, &nontarget).py()
}

#[pyfunction]
fn gpus_required(total_batch: u64, per_gpu_max: u64) -> PyResult<u64> {
    rev::gpus_required(total_batch, per_gpu_max).py()
}

#[pyfunction]
fn registry_names() -> Vec<&'static str> {
    zoo::registry::names()
}

#[pyfunction]
fn reference_param_count(name: &str) -> PyResult<f64> {
    zoo::registry::reference_param_count(name).py()
}

/// The 256 decoded values of the 8-bit dynamic tree type, indexed by code.
#[pyfunction]
fn dynamic_tree_values() -> Vec<f32> {
    DynamicTreeMap::shared().values().to_vec()
}

#[pymodule]
fn revmem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RevmemError", m.py().get_type::<RevmemError>())?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyQuantized>()?;
    m.add_class::<PyOptimizer>()?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    m.add_function(wrap_pyfunction!(eer, m)?)?;
    m.add_function(wrap_pyfunction!(gpus_required, m)?)?;
    m.add_function(wrap_pyfunction!(registry_names, m)?)?;
    m.add_function(wrap_pyfunction!(reference_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_tree_values, m)?)?;
    Ok(())
}
