use super::{ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct WorstEntry {
    pub param: String,
    pub index: usize,
    pub autodiff: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub worst: Option<WorstEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Compares tape gradients with central differences for every parameter
/// entry. The error measure is `|ad - fd| / max(1, |fd|)`.
///
/// `loss_fn` must build a fresh forward pass on the tape it is given and
/// return a scalar.
pub fn grad_check<F, E>(
    mut loss_fn: F,
    store: &mut ParamStore,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<super::TensorError>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|p| p.gradient().into_data())
        .collect();

    let mut eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, store)?;
        Ok(tape.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        entries_checked: 0,
        max_relative_error: 0.0,
        tolerance,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.tensor(id).len();
        for k in 0..n {
            let orig = store.tensor(id).data()[k];
            store.get_mut(id).tensor.data_mut()[k] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).tensor.data_mut()[k] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).tensor.data_mut()[k] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let ad = analytic[id.index()][k];
            let err = (ad - fd).abs() / fd.abs().max(1.0);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some(WorstEntry {
                    param: store.get(id).name.clone(),
                    index: k,
                    autodiff: ad,
                    finite_difference: fd,
                });
            }
        }
    }
    Ok(report)
}
