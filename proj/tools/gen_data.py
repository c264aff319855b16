#!/usr/bin/env python3
"""Writes the bundled model descriptors and synthetic per-layer timings.

Timings are not measurements: FW is the layer's multiply-accumulate count
divided by a nominal device rate, BW is twice that, WU streams the weights
three times through memory. They exist so the examples have realistic
relative magnitudes.
"""
import math
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"
MACS_PER_S = 7e12
MEM_BYTES_PER_S = 9e11


class Net:
    def __init__(self, d, b, e, shape, channels):
        self.header = f"dataset D={d} B={b} E={e}"
        self.lines = []
        self.shape = list(shape)
        self.c = channels
        self.timing = []
        self.last = None

    def _emit(self, name, text, macs, params):
        self.lines.append(f"{name} {text}")
        fw = macs / MACS_PER_S + 1e-6
        self.timing.append((name, fw, 2 * fw, 3 * 4 * params / MEM_BYTES_PER_S))
        self.last = name

    @staticmethod
    def _dims(v):
        return ",".join(str(x) for x in v)

    @staticmethod
    def _out(n, k, s, p):
        return (n + 2 * p - k) // s + 1

    def conv(self, name, f, k, s=1, p=None, bias=False, src=None, src_shape=None, src_c=None):
        p = k // 2 if p is None else p
        shape = src_shape if src_shape else self.shape
        c = src_c if src_c else self.c
        out = [self._out(n, k, s, p) for n in shape]
        extra = f" in={src}" if src else ""
        self._emit(name, f"conv C={c} F={f} X={self._dims(shape)} K={k} stride={s} pad={p} "
                   f"bias={int(bias)}{extra}",
                   c * f * k ** len(shape) * math.prod(out), c * f * k ** len(shape))
        if not src:
            self.shape, self.c = out, f
        return out

    def pool(self, name, k, s, p=0):
        out = [self._out(n, k, s, p) for n in self.shape]
        self._emit(name, f"pool C={self.c} X={self._dims(self.shape)} K={k} stride={s} pad={p}",
                   self.c * k ** len(self.shape) * math.prod(out) / 4, 0)
        self.shape = out

    def eltwise(self, name):
        self._emit(name, f"eltwise C={self.c} X={self._dims(self.shape)}",
                   self.c * math.prod(self.shape) / 8, 0)

    def fc(self, name, f):
        n = self.c * math.prod(self.shape)
        self._emit(name, f"fc C={self.c} F={f} X={self._dims(self.shape)} bias=1", n * f, n * f)
        self.shape, self.c = [1] * len(self.shape), f

    def write(self, stem, comment):
        text = "\n".join([f"# {comment}", self.header] + self.lines) + "\n"
        (OUT / f"{stem}.model").write_text(text)
        rows = ["layer,fw_s_per_sample,bw_s_per_sample,wu_s_per_iter"]
        rows += [f"{n},{fw:.6g},{bw:.6g},{wu:.6g}" for n, fw, bw, wu in self.timing]
        (OUT / f"{stem}.timings.csv").write_text("\n".join(rows) + "\n")


def resnet50():
    n = Net(1281167, 32, 90, [226, 226], 3)
    n.conv("conv1", 64, 7, 2, 3)
    n.eltwise("relu1")
    n.pool("pool1", 3, 2, 1)
    block_in = "pool1"
    for stage, (width, blocks) in enumerate([(64, 3), (128, 4), (256, 6), (512, 3)], start=2):
        for b in range(blocks):
            tag = f"res{stage}{chr(ord('a') + b)}"
            stride = 2 if (b == 0 and stage > 2) else 1
            in_shape, in_c = list(n.shape), n.c
            n.conv(f"{tag}_1", width, 1, 1, 0)
            n.eltwise(f"{tag}_1relu")
            n.conv(f"{tag}_2", width, 3, stride, 1)
            n.eltwise(f"{tag}_2relu")
            n.conv(f"{tag}_3", 4 * width, 1, 1, 0)
            if b == 0:
                n.conv(f"{tag}_proj", 4 * width, 1, stride, 0, src=block_in, src_shape=in_shape, src_c=in_c)
            n.eltwise(f"{tag}_add")
            n.eltwise(f"{tag}_relu")
            block_in = n.last
    n.pool("avgpool", n.shape[0], 1, 0)
    n.fc("fc1000", 1000)
    n.write("resnet50", "ResNet-50 on ImageNet (3x226x226), bottleneck v1.5, no batch-norm layers")


def vgg16():
    n = Net(1281167, 64, 90, [226, 226], 3)
    cfg = [[64, 64], [128, 128], [256, 256, 256], [512, 512, 512], [512, 512, 512]]
    for i, widths in enumerate(cfg, start=1):
        for j, f in enumerate(widths, start=1):
            n.conv(f"conv{i}_{j}", f, 3, 1, 1, bias=True)
            n.eltwise(f"relu{i}_{j}")
        # pad=1 on the later pools reproduces ceil-mode pooling of odd extents
        n.pool(f"pool{i}", 2, 2, 0 if i == 1 else 1)
    n.fc("fc6", 4096)
    n.eltwise("relu6")
    n.eltwise("drop6")
    n.fc("fc7", 4096)
    n.eltwise("relu7")
    n.eltwise("drop7")
    n.fc("fc8", 1000)
    n.write("vgg16", "VGG16 on ImageNet (3x226x226), ceil-mode pooling")


def cosmoflow():
    n = Net(1584, 16, 130, [256, 256, 256], 4)
    n.conv("conv1", 16, 3, 1, 1, bias=True)
    n.eltwise("relu1")
    n.conv("conv1b", 16, 3, 1, 1, bias=True)
    n.eltwise("relu1b")
    n.pool("pool1", 2, 2)
    for i, f in enumerate([32, 64, 128, 128], start=2):
        n.conv(f"conv{i}", f, 3, 1, 1, bias=True)
        n.eltwise(f"relu{i}")
        n.pool(f"pool{i}", 2, 2)
    n.conv("conv6", 128, 3, 1, 1, bias=True)
    n.eltwise("relu6")
    n.pool("pool6", 2, 2)
    n.fc("fc1", 128)
    n.eltwise("relu_fc1")
    n.fc("fc2", 4)
    n.write("cosmoflow", "CosmoFlow-like 3D regressor, 4 components on a 256^3 grid")


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    resnet50()
    vgg16()
    cosmoflow()
