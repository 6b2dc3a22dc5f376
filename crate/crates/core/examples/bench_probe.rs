//! Micro-timings for the training hot path.

use fedscrub::data::synth_blobs;
use fedscrub::eval::eval_accuracy_split;
use fedscrub::model::{build_model, three_block_cnn};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = Instant::now();
    let train = synth_blobs(10, 200, (1, 16, 16), 1)?;
    let test = synth_blobs(10, 200, (1, 16, 16), 2)?;
    eprintln!("blob gen: {:.2?}", t.elapsed());

    let model = build_model(&three_block_cnn((1, 16, 16), 10, [8, 16, 32]), 0)?;

    let t = Instant::now();
    let batch = fedscrub::data::gather(&train, &(0..100).collect::<Vec<_>>());
    eprintln!("gather 100: {:.2?}", t.elapsed());

    let t = Instant::now();
    let logits = model.forward(&batch.images)?;
    eprintln!("forward 100: {:.2?} ({} logits)", t.elapsed(), logits.len());

    let t = Instant::now();
    let (loss, _grads) = model.loss_and_grads(&batch.images, &batch.labels)?;
    eprintln!("loss_and_grads 100: {:.2?} (loss {loss:.2})", t.elapsed());

    let t = Instant::now();
    let acc = eval_accuracy_split(&model, &test, &[9])?;
    eprintln!("eval 2000: {:.2?} ({acc:?})", t.elapsed());
    Ok(())
}
