use super::*;

fn vec_leaf(t: &mut Tape, v: &[f64]) -> Var {
    t.leaf(Tensor::vector(v.to_vec()))
}

#[test]
fn record_add_appends_one_node() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[1.0, 2.0]);
    let b = vec_leaf(&mut t, &[3.0, 4.0]);
    let before = t.len();
    let c = t.record(Op::Add, &[a, b], Tensor::vector(vec![4.0, 6.0])).unwrap();
    assert_eq!(t.len(), before + 1);
    assert_eq!(t.shape(c).unwrap(), &[2]);
}

#[test]
fn record_checks_matmul_contract() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::zeros(&[2, 3]));
    let b = t.leaf(Tensor::zeros(&[3, 4]));
    let c = t.record(Op::Matmul, &[a, b], Tensor::zeros(&[2, 4])).unwrap();
    assert_eq!(t.shape(c).unwrap(), &[2, 4]);

    let bad = t.leaf(Tensor::zeros(&[2, 4]));
    let err = t.record(Op::Matmul, &[a, bad], Tensor::zeros(&[2, 4])).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(t.matmul(a, bad).is_err());
}

#[test]
fn stats_count_operator_nodes_and_tracked_bytes() {
    let mut t = Tape::new();
    assert_eq!(t.stats(), TapeStats { node_count: 0, stored_bytes: 0 });
    let a = vec_leaf(&mut t, &[1.0, 2.0]);
    let b = vec_leaf(&mut t, &[3.0, 4.0]);
    t.add(a, b).unwrap();
    assert_eq!(t.stats(), TapeStats { node_count: 1, stored_bytes: 16 });

    // constant-only values are recorded but not retained for the reverse sweep
    let c = t.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
    t.scalar_mul(c, 2.0).unwrap();
    assert_eq!(t.stats(), TapeStats { node_count: 2, stored_bytes: 16 });
}

#[test]
fn reset_invalidates_old_vars() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[1.0]);
    t.reset();
    assert!(t.is_empty());
    assert!(matches!(t.value(a), Err(Error::ForeignVar(_))));
}

#[test]
fn foreign_var_rejected() {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let a = vec_leaf(&mut t1, &[1.0]);
    let b = vec_leaf(&mut t2, &[1.0]);
    assert!(t1.add(a, b).is_err());
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[0.0, 0.0]);
    let s = t.softmax(a).unwrap();
    assert_eq!(t.value(s).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn softmax_survives_large_logits() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[-20000.0, -20001.0, 1e4]);
    let s = t.softmax(a).unwrap();
    let v = t.value(s).unwrap();
    assert!(v.all_finite());
    assert!((v.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn rotate_by_zero_is_identity() {
    let mut t = Tape::new();
    let pts = t.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, -3.0, 0.5, 0.0, -1.0]).unwrap());
    let angle = t.leaf(Tensor::scalar(0.0));
    let r = t.rotate2d(pts, angle).unwrap();
    assert_eq!(t.value(r).unwrap(), t.value(pts).unwrap());
}

#[test]
fn saturated_cross_entropy_is_zero() {
    let mut t = Tape::new();
    let logits = vec_leaf(&mut t, &[1000.0, -1000.0]);
    let ce = t.cross_entropy(logits, &[0]).unwrap();
    assert!(t.value(ce).unwrap().item().abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_bad_target() {
    let mut t = Tape::new();
    let logits = vec_leaf(&mut t, &[1.0, 2.0, 3.0]);
    let err = t.cross_entropy(logits, &[3]).unwrap_err();
    assert!(err.to_string().contains("cross_entropy"));
}

#[test]
fn square_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0));
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y, &[x]).unwrap();
    assert_eq!(g[0].item(), 6.0);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = [0.3, -1.2, 2.0];
    let mut t = Tape::new();
    let x = vec_leaf(&mut t, &logits);
    let ce = t.cross_entropy(x, &[1]).unwrap();
    let loss = t.sum(ce).unwrap();
    let g = t.backward(loss, &[x]).unwrap();

    let m = logits.iter().copied().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    for (j, &l) in logits.iter().enumerate() {
        let expected = (l - m).exp() / z - if j == 1 { 1.0 } else { 0.0 };
        assert!((g[0].data()[j] - expected).abs() < 1e-14);
    }
}

#[test]
fn backward_requires_scalar_root() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[1.0, 2.0]);
    let b = t.relu(a).unwrap();
    assert!(matches!(t.backward(b, &[a]), Err(Error::NonScalarRoot(_))));
}

#[test]
fn backward_leaves_tape_unchanged() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[1.0, 2.0]);
    let s = t.sum(a).unwrap();
    let before = (t.len(), t.stats());
    t.backward(s, &[a]).unwrap();
    assert_eq!(before, (t.len(), t.stats()));
}

#[test]
fn constants_receive_zero_gradient() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[1.0, 2.0]);
    let c = t.constant(Tensor::vector(vec![5.0, 7.0]));
    let p = t.mul(a, c).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s, &[a, c]).unwrap();
    assert_eq!(g[0].data(), &[5.0, 7.0]);
    assert_eq!(g[1].data(), &[0.0, 0.0]);
}

#[test]
fn scalar_broadcast_in_mul() {
    let mut t = Tape::new();
    let s = t.leaf(Tensor::scalar(2.0));
    let v = vec_leaf(&mut t, &[1.0, 3.0]);
    let p = t.mul(s, v).unwrap();
    assert_eq!(t.value(p).unwrap().data(), &[2.0, 6.0]);
    let total = t.sum(p).unwrap();
    let g = t.backward(total, &[s, v]).unwrap();
    assert_eq!(g[0].item(), 4.0);
    assert_eq!(g[1].data(), &[2.0, 2.0]);
}

#[test]
fn parents_precede_children_and_dependency_query() {
    let mut t = Tape::new();
    let a = vec_leaf(&mut t, &[1.0]);
    let b = vec_leaf(&mut t, &[2.0]);
    let c = t.add(a, a).unwrap();
    let s = t.sum(c).unwrap();
    for (i, n) in t.nodes().iter().enumerate() {
        assert!(n.parents.iter().all(|&p| p < i));
    }
    assert!(t.depends_on(s, a).unwrap());
    assert!(!t.depends_on(s, b).unwrap());
}

#[test]
fn dump_format() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[3, 4]));
    let c = t.matmul(a, b).unwrap();
    t.sum(c).unwrap();
    let mut buf = Vec::new();
    t.dump(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text,
        "0 leaf - 2x3\n1 constant - 3x4\n2 matmul 0,1 2x4\n3 sum 2 scalar\n"
    );
}
