"""Build a vulnerability report: which distortions actually defeat a solver?

Trains a quick solver on lightly distorted digits, then analyzes a harder
test set. The report buckets accuracy by rotation angle, text gray level,
and pepper density, and ranks the most confusable character pairs.
"""

from capnet import (
    Charset,
    DistortionSpec,
    ModelConfig,
    TrainConfig,
    build_model,
    generate_dataset,
    train,
)
from capnet.tensor import Rng
from capnet.vulnscan import analyze, emit_report, uncertainty


def main():
    digits = Charset("0123456789")
    train_set = generate_dataset(300, digits,
                                 DistortionSpec(rotation_max_deg=10.0), seed=1)
    hard_set = generate_dataset(150, digits,
                                DistortionSpec(rotation_max_deg=30.0,
                                               pepper_density=0.10), seed=2)

    config = ModelConfig(charset_size=10, conv_filters=(4, 4, 8, 8),
                         dense_width=64, dropout_rate=0.0)
    model = build_model(config, digits, Rng(0).split(1))
    train(model, train_set, TrainConfig(epochs=10, batch_size=16, seed=0))

    report = analyze(model, hard_set)
    print(f"analyzed {report.n_samples} harder samples\n")

    print("accuracy by |rotation| bucket:")
    for b in report.accuracy_by_rotation:
        bar = "#" * int(b["accuracy"] * 40)
        print(f"  {b['lo']:2d}-{b['hi']:2d} deg  n={b['count']:4d}  "
              f"{b['accuracy']:.3f} {bar}")

    print("\naccuracy by pepper density bucket:")
    for b in report.accuracy_by_pepper_density:
        print(f"  {b['lo']:.2f}-{b['hi']:.2f}  n={b['count']:4d}  "
              f"{b['accuracy']:.3f}")

    print("\nmost confusable pairs (true -> predicted):")
    for pair in report.top_confusable_pairs[:8]:
        print(f"  {pair['true']} -> {pair['predicted']}  x{pair['count']}")

    print(f"\nmean uncertainty when correct:   {report.mean_eta_correct}")
    print(f"mean uncertainty when incorrect: {report.mean_eta_incorrect}")

    # a single sample's score, straight from the head probabilities
    probs = model.predict_dataset([hard_set.samples[0]])[0]
    score = uncertainty(probs)
    print(f"\nsample 0 eta = {score.eta:.3f}, per head "
          f"{[round(r, 3) for r in score.per_head_ratio]}")

    emit_report(report, "demo_report")
    print("wrote demo_report/ (vuln_report.json + bucket CSVs)")


if __name__ == "__main__":
    main()
