use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradError, Gradients, Graph, ParamStore, Var};

/// Worst relative error found for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64, GradError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(GradError::NonScalarOutput(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares analytic gradients of `f` against central finite differences over
/// every coordinate of every parameter.
pub fn grad_check<F>(
    store: &mut ParamStore,
    f: F,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, GradError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>,
{
    let analytic = analytic_gradients(store, &f)?;
    compare_gradients(store, &f, &analytic, step, tol, None)
}

/// Same as [`grad_check`] but probes at most `max_per_param` randomly chosen
/// coordinates of each parameter.
pub fn grad_check_sampled<F>(
    store: &mut ParamStore,
    f: F,
    step: f64,
    tol: f64,
    max_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, GradError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>,
{
    let analytic = analytic_gradients(store, &f)?;
    compare_gradients(store, &f, &analytic, step, tol, Some((max_per_param, seed)))
}

fn analytic_gradients<F>(store: &ParamStore, f: &F) -> Result<Gradients, GradError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)
}

/// Checks a supplied gradient set against central differences of `f`.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`
/// with `floor = 1e-6 * max(1, |f|)`, so coordinates whose true gradient is
/// zero are judged against the round-off level of `f` itself.
pub fn compare_gradients<F>(
    store: &mut ParamStore,
    f: &F,
    analytic: &Gradients,
    step: f64,
    tol: f64,
    sampling: Option<(usize, u64)>,
) -> Result<GradCheckReport, GradError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>,
{
    let f0 = eval(store, f)?;
    let floor = 1e-6 * f0.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.map(|s| s.1).unwrap_or(0));
    let mut params = Vec::new();
    for id in store.ids().collect::<Vec<_>>() {
        let len = store.get(id).len();
        let coords: Vec<usize> = match sampling {
            Some((k, _)) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let dense = analytic.get(id);
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + step;
            let fp = eval(store, f);
            store.get_mut(id).data_mut()[c] = orig - step;
            let fm = eval(store, f);
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (fp? - fm?) / (2.0 * step);
            let a = dense.as_ref().map(|t| t.data()[c]).unwrap_or(0.0);
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: worst,
            checked: coords.len(),
        });
    }
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        max_rel_err,
        tol,
        passed: max_rel_err < tol,
    })
}
