use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::Layer;

fn net(layers: &[(Vec<Vec<f64>>, Vec<f64>)], act: Activation) -> NeuralNetwork {
    let layers = layers.iter().map(|(w, b)| Layer { weights: w.clone(), bias: b.clone() }).collect();
    NeuralNetwork::new(layers, act).unwrap()
}

struct Setup {
    space: VariableSpace,
    states: Vec<VarId>,
    vars: NetworkVars,
}

fn setup(nn: &NeuralNetwork) -> Setup {
    let names: Vec<String> = (1..=nn.input_dim()).map(|i| format!("z{i}")).collect();
    let mut space = VariableSpace::with_vars(&names);
    let states: Vec<VarId> = space.vars().collect();
    let outs: Vec<String> = (1..=nn.output_dim()).map(|j| format!("u{j}")).collect();
    let vars = NetworkVars::register(&mut space, nn, &states, &outs).unwrap();
    Setup { space, states, vars }
}

fn single_relu() -> NeuralNetwork {
    net(&[(vec![vec![1.0]], vec![0.0]), (vec![vec![1.0]], vec![0.0])], Activation::Relu)
}

#[test]
fn single_relu_node_counts() {
    let nn = single_relu();
    let s = setup(&nn);
    let b = nn.ibp(&BoxRegion::symmetric(&[2.0]).unwrap()).unwrap();
    assert_eq!((b.post[0][0].lo, b.post[0][0].hi), (0.0, 2.0));
    let set = relu_constraints(&s.space, &nn, &s.vars, Some(&b)).unwrap();
    assert_eq!(set.inequalities.len(), 4);
    assert_eq!(set.count(Tag::ReluComplementarity), 1);
    let hidden_affine = set.definitions.iter().filter(|d| d.tag == Tag::Affine && d.label.starts_with("layer")).count();
    assert_eq!(hidden_affine, 1);
}

#[test]
fn inactive_relu_node_is_pinned() {
    let nn = single_relu();
    let s = setup(&nn);
    let b = nn.ibp(&BoxRegion::new(vec![-2.0], vec![-1.0]).unwrap()).unwrap();
    let set = relu_constraints(&s.space, &nn, &s.vars, Some(&b)).unwrap();
    let pin = set.definitions.iter().find(|d| d.var == s.vars.post[0][0]).unwrap();
    assert!(pin.expr.is_zero());
    assert_eq!(pin.tag, Tag::IbpBox);
    // after elimination the output is identically zero
    let reduced = set.resolve(&Polynomial::var(s.space.id(), s.vars.outputs[0]));
    assert!(reduced.is_zero());
}

#[test]
fn complementarity_per_node() {
    let nn = net(
        &[
            (vec![vec![1.0, 0.5], vec![-1.0, 0.2]], vec![0.0, 0.0]),
            (vec![vec![0.3, 1.0], vec![1.0, -0.4]], vec![0.0, 0.0]),
            (vec![vec![1.0, 1.0]], vec![0.0]),
        ],
        Activation::Relu,
    );
    let s = setup(&nn);
    let set = relu_constraints(&s.space, &nn, &s.vars, None).unwrap();
    assert_eq!(set.count(Tag::ReluComplementarity), 4);
    assert_eq!(set.count(Tag::IbpBox), 0);
    assert_eq!(set.count(Tag::ReluSign), 8);
}

#[test]
fn tanh_alpha_values() {
    assert!((tanh_alpha(-1.0, 1.0) - 0.761_594_155_955_764_9).abs() < 1e-12);
    assert!((tanh_alpha(-2.0, 2.0) - 0.482_013_790_037_908_4).abs() < 1e-12);
    assert!((tanh_alpha(-1e-6, 1e-6) - 1.0).abs() < 1e-9);
    assert_eq!(tanh_alpha(0.0, 0.0), 1.0);
    // asymmetric interval: the wider side decides
    assert!((tanh_alpha(-0.5, 2.0) - 2f64.tanh() / 2.0).abs() < 1e-15);
}

#[test]
fn tanh_sector_sound_on_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (lo, hi) in [(-1.0, 1.0), (-2.0, 2.0), (-0.3, 3.0), (0.5, 2.0), (-4.0, -1.0)] {
        let a = tanh_alpha(lo, hi);
        for _ in 0..1000 {
            let v: f64 = rng.gen_range(lo..=hi);
            let t = v.tanh();
            assert!((t - a * v) * (v - t) >= -1e-12, "v={v} in [{lo},{hi}]");
        }
    }
}

#[test]
fn slope_counts() {
    assert_eq!(slope_pair_count(&[2, 2], SlopePairs::AllPairs), 6);
    assert_eq!(slope_pair_count(&[5; 5], SlopePairs::AllPairs), 300);
    assert_eq!(slope_pair_count(&[5; 5], SlopePairs::IntraLayer), 50);
    let nn = net(
        &[
            (vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
            (vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]),
            (vec![vec![1.0, 1.0]], vec![0.0]),
        ],
        Activation::Tanh,
    );
    let s = setup(&nn);
    assert_eq!(slope_constraints(&s.space, &s.vars, SlopePairs::AllPairs).inequalities.len(), 6);
    assert_eq!(slope_constraints(&s.space, &s.vars, SlopePairs::IntraLayer).inequalities.len(), 2);
}

#[test]
fn slope_vanishes_for_identity() {
    let nn = net(&[(vec![vec![1.0], vec![2.0]], vec![0.0, 0.0]), (vec![vec![1.0, 1.0]], vec![0.0])], Activation::Tanh);
    let s = setup(&nn);
    let set = slope_constraints(&s.space, &s.vars, SlopePairs::AllPairs);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mut pt = vec![0.0; s.space.len()];
        for (k, layer) in s.vars.pre.iter().enumerate() {
            for (i, v) in layer.iter().enumerate() {
                let val: f64 = rng.gen_range(-3.0..3.0);
                pt[v.index()] = val;
                pt[s.vars.post[k][i].index()] = val;
            }
        }
        assert!(set.inequalities[0].poly.eval(&pt).abs() < 1e-12);
    }
}

#[test]
fn region_box_constraints() {
    let space = VariableSpace::with_vars(&["z1", "z2", "z3"]);
    let states: Vec<VarId> = space.vars().collect();
    let set = region_constraints(&space, &states, &RegionSpec::Box(BoxRegion::symmetric(&[3.0; 3]).unwrap())).unwrap();
    assert_eq!(set.region.len(), 6);
    let texts: Vec<String> = set.region.iter().map(|c| c.poly.display(&space).to_string()).collect();
    for z in ["z1", "z2", "z3"] {
        assert!(texts.contains(&format!("{z} + 3")), "{texts:?}");
        assert!(texts.contains(&format!("-{z} + 3")), "{texts:?}");
    }

    let space = VariableSpace::with_vars(&["z1", "z2"]);
    let states: Vec<VarId> = space.vars().collect();
    let b = BoxRegion::new(vec![-0.3, -1.4], vec![0.3, 1.4]).unwrap();
    let set = region_constraints(&space, &states, &RegionSpec::Box(b)).unwrap();
    assert_eq!(set.region.len(), 4);
    assert!((set.region[1].poly.eval(&[0.1, 0.0]) - 0.2).abs() < 1e-15);

    let ball = Polynomial::parse("1 - z1^2 - z2^2", &space).unwrap();
    let set = region_constraints(&space, &states, &RegionSpec::Custom(vec![ball.clone()])).unwrap();
    assert_eq!(set.region[0].poly, ball);

    let bad = region_constraints(&space, &states, &RegionSpec::Box(BoxRegion::symmetric(&[1.0]).unwrap()));
    assert!(bad.is_err());
}

#[test]
fn recast_alpha_values() {
    let expected = (0.3 - 0.3f64.sin()) / 0.3;
    assert!((recast_alpha(-0.3, 0.3) - expected).abs() < 1e-15);
    assert!((recast_alpha(-0.3, 0.3) - 0.014933).abs() < 5e-7);
    assert_eq!(recast_alpha(-0.7, 0.7), recast_alpha(0.7, -0.7));
    assert!(recast_alpha(-1e-6, 1e-6) < 1e-12);
    assert_eq!(recast_alpha(0.0, 0.0), 0.0);

    let space = VariableSpace::with_vars(&["z1", "z3"]);
    let alpha = recast_alpha(-0.3, 0.3);
    let g = recast_sector_constraint(&space, VarId(1), VarId(0), alpha).unwrap();
    // the true recast variable lies in the sector over the box
    for i in 0..=600 {
        let z1 = -0.3 + 0.001 * f64::from(i);
        assert!(g.eval(&[z1, z1 - z1.sin()]) >= -1e-15, "z1={z1}");
    }
    assert!(recast_sector_constraint(&space, VarId(1), VarId(0), -1.0).is_err());
}

#[test]
fn saturation_modes() {
    let space = VariableSpace::with_vars(&["u", "w"]);
    let (u, w) = (VarId(0), VarId(1));
    let inactive = saturation_constraints(&space, u, w, 1.0, Interval::new(-0.8, 0.8));
    assert_eq!(inactive.definitions.len(), 1);
    assert_eq!(inactive.definitions[0].var, w);
    assert_eq!(inactive.inequalities.len(), 2);

    let active = saturation_constraints(&space, u, w, 1.0, Interval::new(-2.0, 2.0));
    assert!(active.definitions.is_empty());
    assert_eq!(active.inequalities.len(), 3);
    let sector = &active.inequalities[2].poly;
    assert_eq!(sector.display(&space).to_string(), "-0.5*u^2 + 1.5*u*w - w^2");
    for i in 0..=4000 {
        let uu = -2.0 + 0.001 * f64::from(i);
        let ww = uu.clamp(-1.0, 1.0);
        let (worst, _) = active.violation(&[uu, ww]);
        assert!(worst >= -1e-12, "u={uu}");
    }

    assert!(saturation_constraints(&space, u, w, f64::INFINITY, Interval::new(-9.0, 9.0)).is_empty());
}

#[test]
fn robustness_polynomial() {
    let space = VariableSpace::with_vars(&["delta"]);
    let d = robustness_constraint(&space, VarId(0), 1.25, 5.0).unwrap();
    assert_eq!(d.display(&space).to_string(), "-delta^2 + 6.25*delta - 6.25");
    assert!((d.eval(&[3.0]) - 3.5).abs() < 1e-12);
    assert!(robustness_constraint(&space, VarId(0), 2.0, 2.0).is_err());
}

#[test]
fn dump_lists_tags() {
    let nn = single_relu();
    let s = setup(&nn);
    let b = nn.ibp(&BoxRegion::symmetric(&[2.0]).unwrap()).unwrap();
    let set = relu_constraints(&s.space, &nn, &s.vars, Some(&b)).unwrap();
    let text = set.dump(&s.space);
    for tag in ["[affine]", "[relu-sign]", "[relu-complementarity]", "[ibp-box]"] {
        assert!(text.contains(tag), "{text}");
    }
    assert!(text.contains("v1_1 = z1"));
}

fn random_net(rng: &mut ChaCha8Rng, act: Activation, n_in: usize, widths: &[usize]) -> NeuralNetwork {
    let mut layers = Vec::new();
    let mut prev = n_in;
    for &w in widths.iter().chain(std::iter::once(&1)) {
        let weights = (0..w).map(|_| (0..prev).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
        let bias = (0..w).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layers.push(Layer { weights, bias });
        prev = w;
    }
    NeuralNetwork::new(layers, act).unwrap()
}

fn full_abstraction(nn: &NeuralNetwork, region: &BoxRegion) -> (Setup, SemialgebraicSet) {
    let s = setup(nn);
    let b = nn.ibp(region).unwrap();
    let mut set = network_constraints(&s.space, nn, &s.vars, Some(&b), Some(SlopePairs::AllPairs)).unwrap();
    set.extend(region_constraints(&s.space, &s.states, &RegionSpec::Box(region.clone())).unwrap());
    (s, set)
}

fn check_samples(nn: &NeuralNetwork, region: &BoxRegion, n: usize, seed: u64) {
    let (s, set) = full_abstraction(nn, region);
    let reduced = set.eliminate_definitions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let z = region.sample(&mut rng);
        let trace = nn.forward(&z).unwrap();
        let mut pt = vec![0.0; s.space.len()];
        pt[..z.len()].copy_from_slice(&z);
        s.vars.fill_point(&trace, &mut pt);
        let (ineq, eq) = set.violation(&pt);
        assert!(ineq >= -1e-9 && eq <= 1e-9, "z={z:?}: {ineq} {eq}");
        let (ineq, eq) = reduced.violation(&pt);
        assert!(ineq >= -1e-9 && eq <= 1e-9, "reduced, z={z:?}: {ineq} {eq}");
    }
}

#[test]
fn abstraction_contains_true_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for act in [Activation::Relu, Activation::Tanh] {
        let nn = random_net(&mut rng, act, 2, &[3, 3]);
        check_samples(&nn, &BoxRegion::new(vec![-1.0, -2.0], vec![1.5, 0.5]).unwrap(), 10_000, 1);
    }
}

#[test]
fn elimination_leaves_states_and_post_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let nn = random_net(&mut rng, Activation::Tanh, 2, &[2, 2]);
    let (s, set) = full_abstraction(&nn, &BoxRegion::symmetric(&[1.0, 1.0]).unwrap());
    let reduced = set.eliminate_definitions();
    let pre: Vec<VarId> = s.vars.pre.iter().flatten().copied().collect();
    for c in reduced.inequalities.iter().chain(&reduced.equalities) {
        assert!(c.poly.variables().iter().all(|v| !pre.contains(v)));
    }
    assert_eq!(reduced.count(Tag::TanhSector), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn random_networks_are_contained(seed in 0u64..10_000, relu in any::<bool>(), w1 in 1usize..4, w2 in 1usize..4, r in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let nn = random_net(&mut rng, act, 2, &[w1, w2]);
        check_samples(&nn, &BoxRegion::symmetric(&[r, 0.5 * r]).unwrap(), 300, seed);
    }
}
