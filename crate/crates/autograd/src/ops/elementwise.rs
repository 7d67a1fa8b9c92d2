use std::rc::Rc;

use crate::graph::Var;
use crate::tensor::Tensor;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary<'g>(
    x: Var<'g>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64 + 'static,
) -> Var<'g> {
    let xv = x.value();
    let out = xv.map(f);
    x.graph().push_op(
        out,
        &[x],
        Box::new(move |g, _| vec![Some(g.zip_map(&xv, |g, x| g * df(x)))]),
    )
}

impl<'g> Var<'g> {
    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph().push_op(
            out,
            &[self, other],
            Box::new(|g, needs| {
                vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
            }),
        )
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph().push_op(
            out,
            &[self, other],
            Box::new(|g, needs| {
                vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))]
            }),
        )
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |a, b| a * b);
        self.graph().push_op(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.zip_map(&b, |g, b| g * b)),
                    needs[1].then(|| g.zip_map(&a, |g, a| g * a)),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |a, b| a / b);
        let quotient = Rc::new(out.clone());
        self.graph().push_op(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.zip_map(&b, |g, b| g / b)),
                    needs[1].then(|| {
                        let gq = g.zip_map(&quotient, |g, q| g * q);
                        gq.zip_map(&b, |gq, b| -gq / b)
                    }),
                ]
            }),
        )
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let out = self.value().map(|v| v * s);
        self.graph()
            .push_op(out, &[self], Box::new(move |g, _| vec![Some(g.map(|v| v * s))]))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        let out = self.value().map(|v| v + s);
        self.graph()
            .push_op(out, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Var<'g> {
        unary(self, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        unary(
            self,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn abs(self) -> Var<'g> {
        unary(self, f64::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(self) -> Var<'g> {
        unary(self, |x| x * x, |x| 2.0 * x)
    }

    pub fn softplus(self) -> Var<'g> {
        unary(self, softplus_scalar, sigmoid_scalar)
    }

    pub fn sum(self) -> Var<'g> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let out = Tensor::scalar(xv.sum());
        self.graph().push_op(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
        )
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over each of `rows` equal contiguous chunks; output shape `[rows]`.
    pub fn mean_rows(self, rows: usize) -> Var<'g> {
        let xv = self.value();
        assert!(rows > 0 && xv.numel() % rows == 0, "mean_rows: {} not divisible by {rows}", xv.numel());
        let len = xv.numel() / rows;
        let shape = xv.shape().to_vec();
        let out: Vec<f64> = xv
            .data()
            .chunks(len)
            .map(|c| c.iter().sum::<f64>() / len as f64)
            .collect();
        self.graph().push_op(
            Tensor::new([rows], out),
            &[self],
            Box::new(move |g, _| {
                let mut data = Vec::with_capacity(rows * len);
                for &gv in g.data() {
                    data.extend(std::iter::repeat(gv / len as f64).take(len));
                }
                vec![Some(Tensor::new(shape.clone(), data))]
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let xv = self.value();
        let orig = xv.shape().to_vec();
        let out = (*xv).clone().reshape(shape.to_vec());
        self.graph().push_op(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(g.clone().reshape(orig.clone()))]),
        )
    }
}
