//! Central-difference verification of the reverse-mode gradients, from
//! single ops up to the full loss of every trainable variant.

use p2mam_core::corpus::{to_fixed, Example, ItemId};
use p2mam_core::matrix::Matrix;
use p2mam_core::model::{
    init_params, loss_and_grads, HyperParams, ModelParams, Variant,
};
use p2mam_core::optim::grad_check;
use p2mam_core::rng::SeededRng;
use p2mam_core::Tape;

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Matrix::from_vec(rows, cols, data)
}

#[test]
fn matmul_chain_gradients_are_tight() {
    let mut rng = SeededRng::new(1);
    for _ in 0..10 {
        let params = vec![random_matrix(&mut rng, 3, 4), random_matrix(&mut rng, 4, 2)];
        let f = |ps: &[Matrix]| {
            let mut t = Tape::new();
            let a = t.leaf(&ps[0]);
            let b = t.leaf(&ps[1]);
            let prod = t.matmul(a, b);
            // reduce to a scalar with constant one-vectors
            let ones_r = t.constant(Matrix::from_vec(1, 3, vec![1.0; 3]));
            let ones_c = t.constant(Matrix::from_vec(2, 1, vec![1.0; 2]));
            let partial = t.matmul(ones_r, prod);
            let loss = t.matmul(partial, ones_c);
            let v = t.value(loss).at(0, 0);
            let g = t.backward(loss);
            (v, vec![g[a].clone(), g[b].clone()])
        };
        let err = grad_check(f, &params, 1e-4).unwrap();
        assert!(err < 1e-6, "matmul relative error {}", err);
    }
}

#[test]
fn elementwise_op_gradients_are_tight() {
    let mut rng = SeededRng::new(2);
    for _ in 0..10 {
        let params = vec![random_matrix(&mut rng, 2, 3), random_matrix(&mut rng, 2, 3)];
        let f = |ps: &[Matrix]| {
            let mut t = Tape::new();
            let a = t.leaf(&ps[0]);
            let b = t.leaf(&ps[1]);
            let sum = t.add(a, b);
            let scaled = t.scale(sum, 1.7);
            let again = t.add(scaled, a); // fan-out on a
            let ones_r = t.constant(Matrix::from_vec(1, 2, vec![1.0; 2]));
            let ones_c = t.constant(Matrix::from_vec(3, 1, vec![1.0; 3]));
            let partial = t.matmul(ones_r, again);
            let loss = t.matmul(partial, ones_c);
            let v = t.value(loss).at(0, 0);
            let g = t.backward(loss);
            (v, vec![g[a].clone(), g[b].clone()])
        };
        let err = grad_check(f, &params, 1e-4).unwrap();
        assert!(err < 1e-6, "elementwise relative error {}", err);
    }
}

#[test]
fn masked_softmax_gradients_are_tight() {
    let mut rng = SeededRng::new(3);
    for _ in 0..10 {
        let params = vec![random_matrix(&mut rng, 1, 6)];
        let mask = vec![false, true, false, false, true, false];
        let weights = random_matrix(&mut rng, 6, 1);
        let f = |ps: &[Matrix]| {
            let mut t = Tape::new();
            let x = t.leaf(&ps[0]);
            let y = t.masked_softmax(x, mask.clone(), 1.9);
            let w = t.constant(weights.clone());
            let loss = t.matmul(y, w);
            let v = t.value(loss).at(0, 0);
            let g = t.backward(loss);
            (v, vec![g[x].clone()])
        };
        let err = grad_check(f, &params, 1e-4).unwrap();
        assert!(err < 1e-6, "softmax relative error {}", err);
    }
}

fn model_loss_fn<'a>(
    hp: &'a HyperParams,
    ex: &'a p2mam_core::FixedExample,
) -> impl Fn(&[Matrix]) -> (f64, Vec<Matrix>) + 'a {
    move |tensors: &[Matrix]| {
        let mut params = ModelParams::from_tensor_list(hp, tensors).unwrap();
        // the padding row is frozen at zero, not a free parameter: project
        // any finite-difference perturbation of it away
        params.zero_pad_row();
        let (loss, grads) = loss_and_grads(&params, hp, ex).unwrap();
        (loss, grads)
    }
}

#[test]
fn every_trainable_variant_passes_the_full_check() {
    let variants = [
        Variant::O,
        Variant::P,
        Variant::Op,
        Variant::LastOp,
        Variant::Oracle,
        Variant::Mean,
    ];
    let mut rng = SeededRng::new(0);
    for variant in variants {
        let hp = HyperParams {
            d: 8,
            n: 5,
            b: 2,
            variant,
            ..HyperParams::default()
        };
        let params = init_params(20, &hp, 0).unwrap();
        let len = 1 + rng.below(hp.n);
        let input: Vec<ItemId> = (0..len).map(|_| ItemId(1 + rng.below(20) as u32)).collect();
        let target = ItemId(1 + rng.below(20) as u32);
        let ex = to_fixed(&Example { input, target }, hp.n);

        let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
        let err = grad_check(model_loss_fn(&hp, &ex), &tensors, 1e-4).unwrap();
        assert!(err < 1e-3, "variant {:?}: relative error {}", variant, err);
    }
}

#[test]
fn ablation_flags_keep_gradients_correct() {
    // padding mask off reproduces the literal formulas; positions off drops P
    for (pe, mask) in [(false, true), (true, false), (false, false)] {
        let hp = HyperParams {
            d: 8,
            n: 5,
            b: 2,
            variant: Variant::Op,
            use_position_embeddings: pe,
            use_pad_mask: mask,
            ..HyperParams::default()
        };
        let params = init_params(12, &hp, 5).unwrap();
        let ex = to_fixed(
            &Example {
                input: vec![ItemId(3), ItemId(7), ItemId(1)],
                target: ItemId(9),
            },
            hp.n,
        );
        let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
        let err = grad_check(model_loss_fn(&hp, &ex), &tensors, 1e-4).unwrap();
        assert!(err < 1e-3, "pe={} mask={}: relative error {}", pe, mask, err);
    }
}
