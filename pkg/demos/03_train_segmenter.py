"""Train the built-in slice-context segmenter and verify its gradients.

The network is pure numpy with hand-rolled backpropagation, so before
training we check the analytic gradients against central finite differences.
Training uses Adamax with a reduce-on-plateau schedule and the composite
0.3 cross-entropy / 0.7 soft-Dice loss.
"""

from uqcat import (
    PhantomSpec,
    TinySegmenter,
    TrainConfig,
    dice_score,
    generate_cohort,
    gradient_check,
    train,
)

cohort = generate_cohort(PhantomSpec(dims=(32, 32, 16), seed=11), 10)
train_set, holdout = cohort[:8], cohort[8:]

model = TinySegmenter(seed=11)
err = gradient_check(model, *train_set[0], n_coords=120, seed=0)
print(f"gradient check at random init: max relative error {err:.2e} (tolerance 1e-3)")

config = TrainConfig(epochs=30, seed=11)
history = train(model, train_set, config, val_cohort=holdout)
print(f"\ntrained {config.epochs} epochs (lr {config.lr}, plateau factor {config.plateau_factor})")
print("train loss: ", " ".join(f"{x:.3f}" for x in history.train_loss[::3]))
print("val loss:   ", " ".join(f"{x:.3f}" for x in history.val_loss[::3]))
print("lr schedule:", sorted(set(history.lr), reverse=True))

for i, (image, label) in enumerate(holdout):
    prediction = model.forward(image)
    print(f"holdout subject {i}: dice {dice_score(prediction.data >= 0.5, label):.3f}")
