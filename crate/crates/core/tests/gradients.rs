use claimrank::encoder::{EncoderParams, EncoderShape, Pooling, TokenSequence, PAD_ID};
use claimrank::training::{
    batch_loss, batch_loss_and_grad, gradient_check, Batch, LossKind, FD_STEP, TEMPERATURE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 12;

fn random_case(seed: u64, pooling: Pooling) -> (EncoderParams, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = EncoderShape {
        vocab_size: VOCAB,
        dim: 8,
        hidden: 4,
    };
    let mut params = EncoderParams::init(shape, pooling, seed);
    for (_, _, t) in params.weights.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let seq = |rng: &mut ChaCha8Rng| {
        let active = rng.gen_range(1..=6);
        let ids = (0..6)
            .map(|t| {
                if t < active {
                    rng.gen_range(2..VOCAB)
                } else {
                    PAD_ID
                }
            })
            .collect();
        TokenSequence::from_ids(ids)
    };
    let posts = (0..4).map(|_| seq(&mut rng)).collect();
    let claims = (0..4).map(|_| seq(&mut rng)).collect();
    let ids: Vec<u64> = (0..4).collect();
    (params, Batch::new(posts, claims, &ids, &ids).unwrap())
}

#[test]
fn finite_differences_match_over_seeds() {
    for pooling in [Pooling::Mean, Pooling::Attention] {
        for kind in [LossKind::Symmetric, LossKind::Mnr] {
            for seed in 0..20 {
                let (params, batch) = random_case(seed, pooling);
                let r = gradient_check(&params, &batch, TEMPERATURE, kind, FD_STEP).unwrap();
                assert!(
                    r.max_rel_error <= 1e-4,
                    "{pooling} {kind} seed {seed}: {r:?}"
                );
            }
        }
    }
}

#[test]
fn small_step_against_gradient_lowers_loss() {
    for pooling in [Pooling::Mean, Pooling::Attention] {
        let (mut params, batch) = random_case(3, pooling);
        let (before, grads) =
            batch_loss_and_grad(&params, &batch, TEMPERATURE, LossKind::Symmetric).unwrap();
        for ((_, _, p), (_, _, g)) in params
            .weights
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
        {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= 1e-4 * g;
            }
        }
        let after = batch_loss(&params, &batch, TEMPERATURE, LossKind::Symmetric).unwrap();
        assert!(after < before, "{pooling}: {after} >= {before}");
    }
}
