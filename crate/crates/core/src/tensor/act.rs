use super::TensorCHW;

pub fn relu(x: &TensorCHW) -> TensorCHW {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes the upstream gradient where the forward input was strictly positive.
pub fn relu_backward(x: &TensorCHW, grad: &TensorCHW) -> TensorCHW {
    assert_eq!(x.shape(), grad.shape());
    let mut g = grad.clone();
    for (gv, &xv) in g.data.iter_mut().zip(&x.data) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Splits a signed map into its positive part and the magnitude of its
/// negative part: `x_p = max(0, x)`, `x_n = |min(0, x)|`.
pub fn full_relu(x: &TensorCHW) -> (TensorCHW, TensorCHW) {
    let mut p = x.clone();
    let mut n = x.clone();
    p.data.iter_mut().for_each(|v| *v = v.max(0.0));
    n.data.iter_mut().for_each(|v| *v = -(v.min(0.0)));
    // -(0.0) would leave negative zeros behind.
    n.data.iter_mut().for_each(|v| *v += 0.0);
    (p, n)
}

/// Full-ReLU with both halves stacked into one tensor of `2C` channels:
/// every positive-part map first, then every negative-part map, both in
/// input-channel order.
pub fn full_relu_stacked(x: &TensorCHW) -> TensorCHW {
    let (p, n) = full_relu(x);
    TensorCHW::concat(&[&p, &n]).expect("halves share the input shape")
}

/// Gradient of Full-ReLU: `grad_p` where `x > 0`, `-grad_n` where `x < 0`,
/// and zero at exactly zero.
pub fn full_relu_backward(x: &TensorCHW, grad_p: &TensorCHW, grad_n: &TensorCHW) -> TensorCHW {
    assert_eq!(x.shape(), grad_p.shape());
    assert_eq!(x.shape(), grad_n.shape());
    let mut g = TensorCHW::zeros(x.channels, x.height, x.width);
    for i in 0..x.data.len() {
        let v = x.data[i];
        g.data[i] = if v > 0.0 {
            grad_p.data[i]
        } else if v < 0.0 {
            -grad_n.data[i]
        } else {
            0.0
        };
    }
    g
}

/// [`full_relu_backward`] driven by the stacked output of
/// [`full_relu_stacked`]: `x > 0` exactly where the positive half is nonzero
/// and `x < 0` exactly where the negative half is.
pub fn full_relu_backward_stacked(stacked: &TensorCHW, grad: &TensorCHW) -> TensorCHW {
    assert_eq!(stacked.shape(), grad.shape());
    assert_eq!(stacked.channels % 2, 0);
    let c = stacked.channels / 2;
    let half = c * stacked.plane();
    let mut g = TensorCHW::zeros(c, stacked.height, stacked.width);
    let (pos, neg) = stacked.data.split_at(half);
    let (gp, gn) = grad.data.split_at(half);
    for i in 0..half {
        g.data[i] = if pos[i] > 0.0 {
            gp[i]
        } else if neg[i] > 0.0 {
            -gn[i]
        } else {
            0.0
        };
    }
    g
}
