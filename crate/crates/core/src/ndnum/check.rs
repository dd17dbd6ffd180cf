use super::param::{Binding, Parameter};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Largest relative disagreement between tape gradients and central finite
/// differences of `f` at `x`.
///
/// Relative error per coordinate is `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let params = [Parameter::new(x.clone())];
    grad_check_params(&params, |b| f(b.var(0)), h)
}

/// [`grad_check`] over every coordinate of a parameter list.
pub fn grad_check_params<F>(params: &[Parameter], f: F, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&Binding<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let binding = Binding::new(&tape, params);
    let loss = f(&binding)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = binding
        .vars()
        .iter()
        .map(|v| grads.wrt_or_zeros(v))
        .collect();

    let eval = |probe: &[Parameter]| -> Result<f64> {
        let tape = Tape::new();
        let b = Binding::new(&tape, probe);
        Ok(f(&b)?.item())
    };

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, g_ad) in analytic.iter().enumerate() {
        for j in 0..g_ad.len() {
            let orig = probe[pi].value.data()[j];
            probe[pi].value.data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[pi].value.data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[pi].value.data_mut()[j] = orig;
            let g_fd = (up - down) / (2.0 * h);
            let a = g_ad.data()[j];
            let rel = (a - g_fd).abs() / 1f64.max(a.abs()).max(g_fd.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.5]);
        let err = grad_check(|x| Ok(x.mul(&x)?.sum()), &x, 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(|x| Ok(x.tape().constant(4.0)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn composed_primitives() {
        let x = Tensor::vector(vec![0.2, -0.4, 1.1]);
        let err = grad_check(
            |x| {
                let e = x.scale(-0.5).exp();
                let s = x.softplus();
                Ok(e.mul(&s)?.add(&x.relu())?.sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }
}
