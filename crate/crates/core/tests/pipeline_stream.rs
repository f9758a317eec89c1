use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use binfer::bitcore::FixedTensor;
use binfer::layers::{run_batch, run_network};
use binfer::pipeline::{run_streaming_with, PingPong};
use binfer::verify::{case_rng, random_fixed, random_toy_network, Instance};
use rand::Rng;

#[test]
fn producer_runs_at_most_one_phase_ahead() {
    let pp = Arc::new(PingPong::new());
    let max_lead = Arc::new(AtomicU64::new(0));
    let producer = {
        let pp = Arc::clone(&pp);
        let max_lead = Arc::clone(&max_lead);
        thread::spawn(move || {
            for i in 0..200u32 {
                pp.publish(i);
                let (p, c) = pp.phases();
                max_lead.fetch_max(p - c, Ordering::SeqCst);
            }
            pp.close();
        })
    };
    let mut got = Vec::new();
    while let Some(v) = pp.swap() {
        if v % 7 == 0 {
            thread::sleep(Duration::from_micros(200));
        }
        got.push(v);
    }
    producer.join().unwrap();
    assert_eq!(got, (0..200).collect::<Vec<_>>());
    // One slot held by the consumer plus one filled ahead.
    assert!(max_lead.load(Ordering::SeqCst) <= 2);
}

#[test]
fn streaming_equals_sequential_for_every_worker_count() {
    let mut rng = case_rng(31, 0);
    let spec = random_toy_network(&mut rng);
    let inst = Instance::random(&spec, &mut rng).unwrap();
    let model = inst.packed_model().unwrap();
    let inputs: Vec<FixedTensor> = (0..9).map(|_| random_fixed(&mut rng, spec.input)).collect();
    let expected = run_batch(&model, &inputs).unwrap();
    for workers in 1..=model.num_layers() + 2 {
        let got = run_streaming_with(&model, &inputs, workers, None).unwrap();
        assert_eq!(got, expected, "workers = {workers}");
    }
}

#[test]
fn delays_do_not_reorder_results() {
    let mut rng = case_rng(32, 0);
    let spec = random_toy_network(&mut rng);
    let inst = Instance::random(&spec, &mut rng).unwrap();
    let model = inst.packed_model().unwrap();
    let inputs: Vec<FixedTensor> = (0..16)
        .map(|_| random_fixed(&mut rng, spec.input))
        .collect();
    let expected: Vec<_> = inputs
        .iter()
        .map(|x| run_network(&model, x).unwrap())
        .collect();
    let delays: Vec<u64> = (0..16 * model.num_layers())
        .map(|_| rng.gen_range(0..300))
        .collect();
    let n = model.num_layers();
    // Early items are slow in late stages and late items slow in early stages.
    let delay = |stage: usize, item: usize| Duration::from_micros(delays[item * n + stage]);
    let got = run_streaming_with(&model, &inputs, usize::MAX, Some(&delay)).unwrap();
    assert_eq!(got, expected);
}

#[test]
fn errors_surface_per_batch() {
    let mut rng = case_rng(33, 0);
    let small = random_toy_network(&mut rng);
    let inst = Instance::random(&small, &mut rng).unwrap();
    let model = inst.packed_model().unwrap();
    let good = random_fixed(&mut rng, small.input);
    let d = small.input;
    let wrong = FixedTensor::new(
        d.width,
        d.height,
        d.depth + 1,
        vec![0; d.width * d.height * (d.depth + 1)],
    )
    .unwrap();
    for workers in [1, 3, usize::MAX] {
        let err = run_streaming_with(
            &model,
            &[good.clone(), wrong.clone(), good.clone()],
            workers,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }
    assert!(run_streaming_with(&model, &[], 3, None).is_err());
}
