use resgan_core::experiment::DeskProtocol;
use resgan_core::models::ModelKind;

fn main() {
    let mut args = std::env::args().skip(1);
    let kind: ModelKind = args.next().unwrap_or_else(|| "resgan".into()).parse().unwrap();
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1);
    let mut p = DeskProtocol::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-5k"));
    if let Some(e) = args.next() {
        p.epochs = e.parse().unwrap();
    }
    let t = std::time::Instant::now();
    let data = p.prepare().unwrap();
    println!("probe real {:.3} coarse {:.3} ({:.1}s)", data.real_accuracy, data.coarse_accuracy, t.elapsed().as_secs_f64());
    if let Some(w) = args.next() {
        p.eval_window = w.parse().unwrap();
    }
    let run = p.run(&data, kind, seed).unwrap();
    let skip = run.log.len() - run.window.len();
    for (i, r) in run.log.records.iter().enumerate() {
        let probe = i.checked_sub(skip).map(|k| format!("{:.3}", run.window[k].accuracy)).unwrap_or_default();
        println!("{} g {:.4} d {:.4} acc {:.3} probe {probe}", r.epoch, r.loss_g, r.loss_d, r.accuracy);
    }
    println!("{:?} balance {:?} {:.1}s", run.report, run.balance, run.seconds);
}
