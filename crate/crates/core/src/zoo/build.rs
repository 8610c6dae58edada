use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::registry;
use super::spec::{NetworkSpec, Stage};
use crate::error::Result;
use crate::param::Param;
use crate::rev::{Chain, Layer, Network, Prim, Projection, ResidualFn, RevBlock};
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Instantiates a validated spec with seeded He-uniform weights.
pub fn build_spec<S: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut c = 1usize;
    for st in &spec.stages {
        match *st {
            Stage::Conv { channels, kernel, stride } => {
                layers.push(Layer::Conv(Chain::new(vec![
                    Prim::conv(c, channels, kernel, stride, &mut rng),
                    Prim::bn(channels),
                    Prim::Relu,
                ])));
                c = channels;
            }
            Stage::Res { kind, channels, repeat } => {
                let out = channels * kind.expansion();
                for _ in 0..repeat {
                    let f = ResidualFn::new(kind, c, out, 1, &mut rng)?;
                    let shortcut = (c != out).then(|| projection(c, out, 1, &mut rng));
                    layers.push(Layer::Residual { f, shortcut });
                    c = out;
                }
            }
            Stage::Ds { kind, channels } => {
                let out = channels * kind.expansion();
                let f = ResidualFn::new(kind, c, out, 2, &mut rng)?;
                layers.push(Layer::Residual { f, shortcut: Some(projection(c, out, 2, &mut rng)) });
                c = out;
            }
            Stage::RevRes { kind, c_half, repeat } => {
                let mut blocks = Vec::with_capacity(repeat);
                for _ in 0..repeat {
                    let f = ResidualFn::reversible(kind, c_half, &mut rng)?;
                    let g = ResidualFn::reversible(kind, c_half, &mut rng)?;
                    blocks.push(RevBlock::new(f, g)?);
                }
                layers.push(Layer::RevStage(blocks));
            }
            Stage::RevDs { r, c_out } => {
                layers.push(Layer::RevDs { ratio: r });
                c = c_out;
            }
            Stage::Pooling { .. } => layers.push(Layer::Pool),
            Stage::Fc { d_in, d_out } => {
                let w = Param::he_uniform(Shape::new(d_in, d_out, 1, 1), d_in, &mut rng);
                layers.push(Layer::Fc { w, b: Param::zeros(Shape::flat(1, d_out)) });
            }
        }
    }
    Ok(Network::new(spec.name.clone(), layers, 1, spec.feat_dim))
}

fn projection<S: Scalar>(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Projection<S> {
    Projection { w: Param::he_uniform(Shape::new(c_out, c_in, 1, 1), c_in, rng), stride }
}

/// Builds a registry network by name.
pub fn build<S: Scalar>(name: &str, seed: u64) -> Result<Network<S>> {
    build_spec(&registry::spec(name)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rev::ResidualKind;
    use crate::zoo::spec::{toy_spec, RevType};

    #[test]
    fn built_count_matches_analytic_count() {
        for ty in [RevType::TypeI, RevType::TypeII] {
            for kind in ResidualKind::ALL {
                let spec = toy_spec(&[2, 1, 1], 8, kind, ty).unwrap();
                let net = build_spec::<f32>(&spec, 0).unwrap();
                assert_eq!(net.param_count(), spec.validate().unwrap().param_count, "{}", spec.name);
            }
        }
    }

    #[test]
    fn seed_determines_weights() {
        let spec = toy_spec(&[1, 1], 8, ResidualKind::Basic, RevType::TypeII).unwrap();
        let a = build_spec::<f32>(&spec, 5).unwrap();
        let b = build_spec::<f32>(&spec, 5).unwrap();
        let c = build_spec::<f32>(&spec, 6).unwrap();
        let values = |n: &Network<f32>| n.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
    }
}
