GRU_SIDES = ("gru_u", "gru_i")

KERNEL_PARAMS = (
    "P_t", "b_t", "v", "P_s", "b_r", "P_x", "b_x",
    *(f"{side}.{k}" for side in GRU_SIDES
      for k in ("W_r", "W_z", "W_h", "U_r", "U_z", "U_h", "b_r", "b_z", "b_h")),
    "mlp.L1", "mlp.c1", "mlp.L2", "mlp.c2",
)


def check_layout(params, grads=None):
    for name in KERNEL_PARAMS:
        if name not in params:
            raise KeyError(f"missing parameter {name!r}")
        arr = params[name]
        if arr.dtype.kind != "f" or arr.dtype.itemsize != 8 or not arr.flags.c_contiguous:
            raise TypeError(f"parameter {name!r} must be a C-contiguous float64 array")
        if grads is not None and grads[name].shape != arr.shape:
            raise ValueError(f"gradient buffer {name!r} has shape {grads[name].shape}, want {arr.shape}")
