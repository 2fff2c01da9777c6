//! Genuine multi-process style distributed training: workers serve the
//! sep/1 wire protocol on loopback sockets, the master connects, ships
//! partitions and drives synchronized rounds.
//!
//!     cargo run --release --example distributed_sockets

use std::net::TcpListener;
use std::time::Duration;

use sepgp::dataset::{self, gaussian_blobs, split};
use sepgp::distributed::{self, wire};
use sepgp::predictor;
use sepgp::trainer::TrainConfig;

fn main() -> sepgp::Result<()> {
    let data = gaussian_blobs(1200, 2, 1.1, 13);
    let (train, test) = split(&data, 0.1, 13)?;

    // reserve two loopback addresses and start the workers
    let addrs: Vec<String> = (0..2)
        .map(|_| {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            let a = l.local_addr().unwrap().to_string();
            drop(l);
            a
        })
        .collect();
    let handles: Vec<_> = addrs
        .iter()
        .map(|a| {
            let a = a.clone();
            std::thread::spawn(move || wire::run_worker(&a))
        })
        .collect();
    std::thread::sleep(Duration::from_millis(200));
    println!("workers listening on {addrs:?}");

    let mut config = TrainConfig::batch(32);
    config.iterations = 30;
    config.seed = 13;

    let (std_train, _) = dataset::standardize(&train);
    let parts = distributed::partition(train.n(), addrs.len(), config.seed)?;
    let mut pool = wire::SocketPool::connect(
        &addrs,
        &parts,
        &std_train.inputs,
        &std_train.labels,
        config.num_inducing,
        train.dim(),
        Duration::from_secs(60),
    )?;
    let (model, curve) =
        distributed::distributed_train_with_pool(&train, &config, &mut pool, None)?;
    for h in handles {
        h.join().expect("worker thread")?;
    }

    let eval = predictor::evaluate(&model, &test)?;
    println!(
        "done over sockets: {} rounds, final log_zq {:.2}, test error {:.4}",
        curve.records.len(),
        model.meta.final_log_zq,
        eval.error_rate
    );
    Ok(())
}
