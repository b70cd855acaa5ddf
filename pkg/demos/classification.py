"""Learning the window length together with a classifier.

Two classes of noisy tones differ only in whether the tone is gated into
bursts. A linear softmax head reads the magnitude spectrogram; the window
length is trained jointly with the head and compared with heads trained on
a grid of fixed lengths.
"""

from dstft import pipelines as pl


def main():
    out = pl.classification_task(record=True)
    j = out.joint
    print(f"joint: theta {j.history[0]['theta']:.1f} -> {j.theta:.2f}, "
          f"test cross-entropy {j.test_loss:.4f}, accuracy {j.test_acc:.2f}")
    for th, run in sorted(out.grid.items()):
        print(f"fixed theta {th:4.0f}: test cross-entropy {run.test_loss:.4f}, accuracy {run.test_acc:.2f}")
    print(f"joint / best fixed = {j.test_loss / out.best_grid_loss:.3f}")


if __name__ == "__main__":
    main()
