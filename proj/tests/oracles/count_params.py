"""Independent parameter counts for the fixtures in tests/fixtures/param_counts.json.

Counts are computed twice: closed-form arithmetic, and (when available) a
Keras model built layer by layer. Run: python3 tests/oracles/count_params.py
"""
import json
import sys


def closed_form(arch, h, w, c, k, filters, dense=256):
    conv = bn = 0
    cin = c
    for f in filters:
        conv += 9 * cin * f + f
        if arch == "ccnn":
            bn += 2 * f
        cin = f
        h, w = h // 2, w // 2
    head_in = cin if arch == "ccnn" else h * w * cin
    units = 1 if k == 2 else k
    dense_params = head_in * dense + dense + dense * units + units
    trainable = conv + bn + dense_params
    running = bn  # mean + var per channel
    return {"trainable": trainable, "total_with_running_stats": trainable + running}


def keras_count(arch, h, w, c, k, filters, dense=256):
    import tensorflow as tf
    from tensorflow.keras import layers

    inp = tf.keras.Input((h, w, c))
    x = inp
    for f in filters:
        x = layers.Conv2D(f, 3, padding="same")(x)
        if arch == "ccnn":
            x = layers.BatchNormalization()(x)
        x = layers.Activation("relu")(x)
        x = layers.MaxPooling2D(2)(x)
        x = layers.Dropout(0.3)(x)
    x = layers.GlobalAveragePooling2D()(x) if arch == "ccnn" else layers.Flatten()(x)
    x = layers.Dense(dense, activation="relu")(x)
    x = layers.Dropout(0.5)(x)
    x = layers.Dense(1 if k == 2 else k)(x)
    m = tf.keras.Model(inp, x)
    trainable = int(sum(v.shape.num_elements() for v in m.trainable_weights))
    return {"trainable": trainable, "total_with_running_stats": int(m.count_params())}


CASES = {
    "ccnn_180x180x3_k3": ("ccnn", 180, 180, 3, 3, [32, 64, 128, 256]),
    "cnn_180x180x3_k3": ("cnn", 180, 180, 3, 3, [32, 64, 128]),
    "ccnn_32x32x1_k3_mini": ("ccnn", 32, 32, 1, 3, [8, 16, 32, 64]),
    "ccnn_180x180x3_k2": ("ccnn", 180, 180, 3, 2, [32, 64, 128, 256]),
}

if __name__ == "__main__":
    out = {}
    for name, args in CASES.items():
        a = closed_form(*args)
        try:
            b = keras_count(*args)
            if a != b:
                sys.exit(f"{name}: closed form {a} != keras {b}")
        except ImportError:
            pass
        out[name] = a
    print(json.dumps(out, indent=2))
