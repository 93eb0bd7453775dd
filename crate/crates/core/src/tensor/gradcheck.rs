use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Anything that owns a [`ParamStore`].
pub trait HasParams {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(1e-8, |a| + |n|)` over all parameter entries.
    pub max_discrepancy: f64,
    /// Parameter name, entry, analytic and numeric gradient at the maximum.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries: usize,
}

fn evaluate<M, F>(model: &M, f: &F) -> Result<f64>
where
    F: Fn(&M, &Tape) -> Result<Var>,
{
    let tape = Tape::no_grad();
    let loss = f(model, &tape)?;
    Ok(tape.scalar(loss))
}

/// Compares tape gradients with central differences for every entry of
/// every parameter.
///
/// `f` must build the scalar objective on the tape it is handed and must be
/// deterministic; any sampling noise has to be fixed by the caller.
pub fn grad_check<M, F>(model: &mut M, eps: f64, f: F) -> Result<GradCheckReport>
where
    M: HasParams,
    F: Fn(&M, &Tape) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::contract(format!("eps {eps} outside [1e-6, 1e-3]")));
    }

    let tape = Tape::new();
    let loss = f(model, &tape)?;
    let base = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .ids()
        .map(|id| {
            grads
                .param(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; model.params().get(id).len()])
        })
        .collect();
    drop(tape);

    let again = evaluate(model, &f)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Determinism {
            first: base,
            second: again,
        });
    }

    let mut report = GradCheckReport {
        max_discrepancy: 0.0,
        worst: None,
        entries: 0,
    };
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for j in 0..model.params().get(id).len() {
            let orig = model.params().get(id).values()[j];
            model.params_mut().get_mut(id).values_mut()[j] = orig + eps;
            let up = evaluate(model, &f);
            model.params_mut().get_mut(id).values_mut()[j] = orig - eps;
            let down = evaluate(model, &f);
            model.params_mut().get_mut(id).values_mut()[j] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            let a = analytic[id.index()][j];
            let d = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.entries += 1;
            if report.worst.is_none() || d > report.max_discrepancy {
                report.max_discrepancy = d;
                report.worst = Some((model.params().name(id).to_string(), j, a, numeric));
            }
        }
    }
    Ok(report)
}
