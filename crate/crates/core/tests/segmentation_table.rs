use tli_core::segmentation::{attractors, segment};
use tli_core::types::{Demonstration, LabelMap, ModeId, Sample, SensorState, Vector};

fn label_map() -> LabelMap {
    LabelMap::new(
        vec!["red".into(), "blue".into(), "green".into()],
        vec![
            (ModeId::new(0, "R"), "100".parse().unwrap()),
            (ModeId::new(1, "B"), "010".parse().unwrap()),
            (ModeId::new(2, "G"), "001".parse().unwrap()),
        ],
    )
    .unwrap()
}

/// x^{t,d}: distinct, exactly representable coordinates per step and demo.
fn x(t: usize, d: usize) -> Vector {
    Vector::from_vec(vec![t as f64 * 0.5, d as f64 * 3.0 + t as f64 * 0.25])
}

/// `runs` lists (valuation, number of steps); steps are numbered from 1.
fn demo(d: usize, runs: &[(&str, usize)]) -> Demonstration {
    let mut samples = Vec::new();
    let mut t = 1;
    for (bits, n) in runs {
        let alpha: SensorState = bits.parse().unwrap();
        for _ in 0..*n {
            samples.push(Sample {
                x: x(t, d),
                xdot: Vector::from_vec(vec![0.5, 0.25]),
                alpha: alpha.clone(),
            });
            t += 1;
        }
    }
    Demonstration::new(samples, 1.0).unwrap()
}

fn fixture() -> Vec<Demonstration> {
    vec![
        demo(1, &[("100", 2), ("010", 4), ("001", 4)]),
        demo(2, &[("100", 4), ("010", 5), ("001", 1)]),
    ]
}

#[test]
fn three_segments_per_demo() {
    let demos = fixture();
    let segs = segment(&demos, &label_map()).unwrap();
    assert_eq!(segs.len(), 6);
    for d in 0..2 {
        let names: Vec<&str> = segs.iter().filter(|s| s.demo == d).map(|s| s.mode.name.as_str()).collect();
        assert_eq!(names, ["R", "B", "G"]);
    }
    let lens: Vec<usize> = segs.iter().map(|s| s.len()).collect();
    assert_eq!(lens, [2, 4, 4, 4, 5, 1]);
}

#[test]
fn segments_reassemble_the_demos() {
    let demos = fixture();
    let segs = segment(&demos, &label_map()).unwrap();
    for (d, demo) in demos.iter().enumerate() {
        let joined: Vec<Sample> = segs
            .iter()
            .filter(|s| s.demo == d)
            .flat_map(|s| s.samples.iter().cloned())
            .collect();
        assert_eq!(joined, demo.samples);
    }
}

#[test]
fn table_attractors_are_exact_means() {
    let segs = segment(&fixture(), &label_map()).unwrap();
    let set = attractors(&segs);
    let m = |i: usize, n: &str| ModeId::new(i, n);
    let mean = |a: Vector, b: Vector| (a + b) / 2.0;
    let red = set.get(&m(0, "R"), Some(&m(1, "B"))).unwrap();
    assert_eq!(red.x_star, mean(x(2, 1), x(4, 2)));
    let blue = set.get(&m(1, "B"), Some(&m(2, "G"))).unwrap();
    assert_eq!(blue.x_star, mean(x(6, 1), x(9, 2)));
    let green = set.get(&m(2, "G"), None).unwrap();
    assert_eq!(green.x_star, mean(x(10, 1), x(10, 2)));
    assert_eq!(set.len(), 3);
}
