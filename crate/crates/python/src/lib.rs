use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use edgeinv::inference::{reconstruct as run_reconstruct, Method, ReconstructOptions, Tolerance};
use edgeinv::io::{fasta, newick, ReconstructReport};
use edgeinv::repr::ModelKind;
use edgeinv::{Bipartition, PatternTensor};

fn err(e: edgeinv::Error) -> PyErr {
    match e {
        edgeinv::Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn model(name: &str) -> PyResult<ModelKind> {
    name.parse().map_err(err)
}

fn split(n: usize, spec: &str) -> PyResult<Bipartition> {
    let s: Bipartition = spec.parse().map_err(err)?;
    if s.n() != n {
        return Err(PyValueError::new_err(format!("split {spec} is not over {n} leaves")));
    }
    Ok(s)
}

fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A joint distribution of leaf patterns, `4^n` values in index order
/// (leaf 1 is the most significant digit).
#[pyclass(name = "Tensor", module = "edgeinv", frozen)]
struct Tensor {
    inner: PatternTensor,
}

#[pymethods]
impl Tensor {
    #[new]
    fn new(n: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Tensor { inner: PatternTensor::new(n, 4, values).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn stochastic(&self) -> bool {
        self.inner.is_stochastic()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// Value at a pattern string such as `"ACGT"`.
    fn __getitem__(&self, pattern: &str) -> PyResult<f64> {
        let idx: Option<Vec<usize>> = pattern.chars().map(|c| edgeinv::DNA.iter().position(|&d| d == c)).collect();
        match idx {
            Some(p) if p.len() == self.inner.n() => Ok(self.inner.get(&p)),
            _ => Err(PyValueError::new_err(format!("bad pattern {pattern:?}"))),
        }
    }

    fn l1_distance(&self, other: &Tensor) -> PyResult<f64> {
        if other.inner.n() != self.inner.n() {
            return Err(PyValueError::new_err("tensors have different leaf counts"));
        }
        Ok(self.inner.l1_distance(&other.inner))
    }

    /// Multinomial alignment of `sites` columns, as a FASTA string.
    fn sample_fasta(&self, sites: u64, seed: u64) -> PyResult<String> {
        Ok(fasta::write(&edgeinv::sample_alignment(&self.inner, sites, seed).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!("Tensor(n={}, stochastic={})", self.inner.n(), self.inner.is_stochastic())
    }
}

#[pyfunction]
fn multiplicities(model_name: &str, power: usize) -> PyResult<Vec<usize>> {
    Ok(edgeinv::multiplicities(model(model_name)?.model(), power).map_err(err)?.entries)
}

#[pyfunction]
fn character_table(model_name: &str) -> PyResult<Vec<Vec<i64>>> {
    Ok(model(model_name)?.model().character_table.clone())
}

/// Joint distribution of a random equivariant presentation on the tree.
#[pyfunction]
#[pyo3(signature = (model_name, tree, seed, concentration = 10.0))]
fn simulate(model_name: &str, tree: &str, seed: u64, concentration: f64) -> PyResult<Tensor> {
    let parsed = newick::parse(tree).map_err(err)?;
    let pres = edgeinv::random_presentation(model(model_name)?.model(), &parsed.tree, seed, concentration).map_err(err)?;
    Ok(Tensor { inner: edgeinv::joint_distribution(&pres).map_err(err)? })
}

/// Empirical tensor and taxon names of a FASTA alignment.
#[pyfunction]
#[pyo3(signature = (text, ambiguous = "error"))]
fn read_fasta(text: &str, ambiguous: &str) -> PyResult<(Tensor, Vec<String>)> {
    let aln = fasta::read(text, ambiguous.parse().map_err(err)?).map_err(err)?;
    Ok((Tensor { inner: edgeinv::empirical_tensor(&aln).map_err(err)? }, aln.taxa))
}

#[pyfunction]
fn split_score(tensor: &Tensor, split_spec: &str, model_name: &str) -> PyResult<f64> {
    let s = split(tensor.inner.n(), split_spec)?;
    Ok(edgeinv::split_score(&tensor.inner, &s, model(model_name)?.model()).map_err(err)?.score)
}

/// Numerical ranks of the thin-flattening blocks.
#[pyfunction]
#[pyo3(signature = (tensor, split_spec, model_name, tol = 1e-7))]
fn thin_rank(tensor: &Tensor, split_spec: &str, model_name: &str, tol: f64) -> PyResult<Vec<usize>> {
    let s = split(tensor.inner.n(), split_spec)?;
    let tf = edgeinv::thin_flatten(&tensor.inner, &s, model(model_name)?.model()).map_err(err)?;
    Ok(edgeinv::thin_rank(&tf, tol).entries)
}

#[pyfunction]
fn model_fit_score(tensor: &Tensor, model_name: &str) -> PyResult<f64> {
    edgeinv::model_fit_score(&tensor.inner, model(model_name)?.model()).map_err(err)
}

#[pyfunction]
fn generator_catalog<'py>(py: Python<'py>, model_name: &str, l1: usize, l2: usize) -> PyResult<Bound<'py, PyAny>> {
    let catalog = edgeinv::generator_catalog(model(model_name)?.model(), l1, l2).map_err(err)?;
    to_python(py, &catalog)
}

/// Reconstruction report as a dict. `tol` is a number, `"exact"` or
/// `"data"`; `method` is `"exhaustive"`, `"splits"` or None for automatic.
#[pyfunction]
#[pyo3(signature = (tensor, model_name, method = None, tol = None, complete = false))]
fn reconstruct<'py>(
    py: Python<'py>,
    tensor: &Tensor,
    model_name: &str,
    method: Option<&str>,
    tol: Option<&Bound<'py, PyAny>>,
    complete: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = model(model_name)?;
    let method = match method {
        None => None,
        Some("exhaustive") => Some(Method::Exhaustive),
        Some("splits") => Some(Method::Splits),
        Some(other) => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let tol = match tol {
        None => Tolerance::Exact,
        Some(t) => match t.extract::<f64>() {
            Ok(x) => Tolerance::Fixed(x),
            Err(_) => match t.extract::<String>()?.as_str() {
                "exact" => Tolerance::Exact,
                "data" => Tolerance::DataDriven,
                other => return Err(PyValueError::new_err(format!("unknown tolerance {other:?}"))),
            },
        },
    };
    let opts = ReconstructOptions { method, tol, complete, ..Default::default() };
    let psi = &tensor.inner;
    let result = py.detach(|| run_reconstruct(psi, kind.model(), &opts)).map_err(err)?;
    let taxa: Vec<String> = (1..=psi.n()).map(|i| i.to_string()).collect();
    to_python(py, &ReconstructReport::new(kind, &result, &taxa).map_err(err)?)
}

#[pymodule]
#[pyo3(name = "edgeinv")]
fn edgeinv_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add("MODELS", ModelKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(multiplicities, m)?)?;
    m.add_function(wrap_pyfunction!(character_table, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(read_fasta, m)?)?;
    m.add_function(wrap_pyfunction!(split_score, m)?)?;
    m.add_function(wrap_pyfunction!(thin_rank, m)?)?;
    m.add_function(wrap_pyfunction!(model_fit_score, m)?)?;
    m.add_function(wrap_pyfunction!(generator_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    Ok(())
}
