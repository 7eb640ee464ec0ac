use proptest::prelude::*;
use pyrreg::cnn::{Activation, Network, Tensor};
use pyrreg::rng::{self, Prng};
use rand::Rng;

fn net(seed: u64) -> Network {
    let mut n = Network::builder(4)
        .conv(3, 3, 8, Activation::Relu)
        .dropout(0.1)
        .conv(1, 3, 8, Activation::Relu)
        .conv(3, 1, 6, Activation::Relu)
        .conv(1, 1, 2, Activation::Linear)
        .build();
    n.init_weights(&mut rng::from_seed(seed));
    n
}

fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
    let mut r = rng::from_seed(seed);
    Tensor::new(h, w, c, (0..h * w * c).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn window(t: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * t.channels);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for c in 0..t.channels {
                data.push(t.get(y, x, c));
            }
        }
    }
    Tensor::new(h, w, t.channels, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sliding_window_matches_full_convolution(seed in any::<u64>(), oy in 0usize..6, ox in 0usize..6) {
        let n = net(seed);
        let (rh, rw) = n.receptive_field();
        let big = random_tensor(2 * rh, 2 * rw, 4, seed ^ 1);
        let full = n.forward(&big).unwrap();
        let (oy, ox) = (oy.min(full.height - 1), ox.min(full.width - 1));
        let single = n.forward(&window(&big, oy, ox, rh, rw)).unwrap();
        prop_assert_eq!((single.height, single.width), (1, 1));
        for c in 0..2 {
            prop_assert!((full.get(oy, ox, c) - single.get(0, 0, c)).abs() < 1e-5);
        }
    }
}

#[test]
fn inference_cache_matches_plain_forward() {
    let n = net(3);
    let x = random_tensor(12, 14, 4, 4);
    let cache = n.forward_cached::<Prng>(&x, None).unwrap();
    assert_eq!(cache.output(), &n.forward(&x).unwrap());
    assert_eq!(cache.activations().len(), n.layers().len() + 1);
}

#[test]
fn training_forward_differs_only_through_dropout() {
    let n = net(5);
    let x = random_tensor(12, 14, 4, 6);
    let a = n.forward_cached(&x, Some(&mut rng::from_seed(1))).unwrap();
    let b = n.forward_cached(&x, Some(&mut rng::from_seed(1))).unwrap();
    assert_eq!(a.output(), b.output());
    assert_ne!(a.output(), &n.forward(&x).unwrap());
}
