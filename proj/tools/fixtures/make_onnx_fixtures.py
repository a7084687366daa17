#!/usr/bin/env python3
"""Writes the tiny ONNX encoders used by the backbone tests.

  tiny_spatial.onnx  [N,3,32,32] -> Conv3x3(8) -> Relu            -> [N,8,32,32]
  tiny_vector.onnx   [N,3,32,32] -> Conv3x3(8) -> Relu -> GAP -> Gemm(5) -> [N,5]

Weights come from a fixed numpy seed so the files are reproducible.
tiny_expected.json holds reference outputs for probe_input(), computed with
onnx's reference evaluator. Requires the `onnx` and `numpy` packages.
"""
import json
import pathlib
import sys

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper
from onnx.reference import ReferenceEvaluator


def conv_block(rng):
    w = rng.normal(0.0, 0.3, size=(8, 3, 3, 3)).astype(np.float32)
    b = rng.normal(0.0, 0.1, size=(8,)).astype(np.float32)
    inits = [numpy_helper.from_array(w, "conv_w"), numpy_helper.from_array(b, "conv_b")]
    nodes = [
        helper.make_node("Conv", ["input", "conv_w", "conv_b"], ["conv"],
                         kernel_shape=[3, 3], pads=[1, 1, 1, 1]),
        helper.make_node("Relu", ["conv"], ["relu"]),
    ]
    return nodes, inits


def save(graph, path):
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 11)],
                              producer_name="delc-fixtures")
    model.ir_version = 6
    onnx.checker.check_model(model)
    onnx.save(model, str(path))


def probe_input():
    """Two samples, NCHW: v = sin(0.37*i + 0.5*n) with i the flat index within a sample."""
    i = np.arange(3 * 32 * 32, dtype=np.float64)
    return np.stack([np.sin(0.37 * i + 0.5 * n) for n in range(2)]).reshape(2, 3, 32, 32).astype(np.float32)


def reference_outputs(path):
    out = ReferenceEvaluator(str(path)).run(None, {"input": probe_input()})[0].astype(np.float64)
    if out.ndim == 4:
        out = out.mean(axis=(2, 3))
    return out.tolist()


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inp = helper.make_tensor_value_info("input", TensorProto.FLOAT, ["N", 3, 32, 32])

    rng = np.random.default_rng(20230101)
    nodes, inits = conv_block(rng)
    nodes[-1].output[0] = "features"
    spatial_out = helper.make_tensor_value_info("features", TensorProto.FLOAT, ["N", 8, 32, 32])
    save(helper.make_graph(nodes, "tiny_spatial", [inp], [spatial_out], inits),
         out / "tiny_spatial.onnx")

    rng = np.random.default_rng(20230102)
    nodes, inits = conv_block(rng)
    fc_w = rng.normal(0.0, 0.5, size=(5, 8)).astype(np.float32)
    fc_b = rng.normal(0.0, 0.1, size=(5,)).astype(np.float32)
    inits += [numpy_helper.from_array(fc_w, "fc_w"), numpy_helper.from_array(fc_b, "fc_b")]
    nodes += [
        helper.make_node("GlobalAveragePool", ["relu"], ["gap"]),
        helper.make_node("Flatten", ["gap"], ["flat"], axis=1),
        helper.make_node("Gemm", ["flat", "fc_w", "fc_b"], ["features"], transB=1),
    ]
    vector_out = helper.make_tensor_value_info("features", TensorProto.FLOAT, ["N", 5])
    save(helper.make_graph(nodes, "tiny_vector", [inp], [vector_out], inits),
         out / "tiny_vector.onnx")

    expected = {name: reference_outputs(out / f"{name}.onnx")
                for name in ("tiny_spatial", "tiny_vector")}
    (out / "tiny_expected.json").write_text(json.dumps(expected, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
