import numpy as np

from .autograd import Tensor, add, concat, gather, matmul, mul, narrow, sigmoid, stack, tanh


def lstm_shapes(prefix, input_dim, hidden):
    return {
        f"{prefix}.W_x": (input_dim, 4 * hidden),
        f"{prefix}.W_h": (hidden, 4 * hidden),
        f"{prefix}.b": (4 * hidden,),
    }


def open_forget_gates(params, value=1.0):
    """Set the forget-gate bias of every LSTM cell in `params` to `value`."""
    for name in params.names():
        prefix = name[: -len(".W_h")]
        if name.endswith(".W_h") and f"{prefix}.W_x" in params:
            hidden = params[name].shape[0]
            params[f"{prefix}.b"].values[hidden : 2 * hidden] = value
    return params


def zero_state(hidden):
    return Tensor(np.zeros(hidden)), Tensor(np.zeros(hidden))


def lstm_cell(z, c_prev, hidden):
    """Gate pre-activations z = [i; f; g; o] -> new (h, c)."""
    i = sigmoid(narrow(z, 0, hidden))
    f = sigmoid(narrow(z, hidden, 2 * hidden))
    g = tanh(narrow(z, 2 * hidden, 3 * hidden))
    o = sigmoid(narrow(z, 3 * hidden, 4 * hidden))
    c = add(mul(f, c_prev), mul(i, g))
    return mul(o, tanh(c)), c


def lstm_step(params, prefix, x, state):
    h, c = state
    W_h = params[f"{prefix}.W_h"]
    z = add(add(matmul(x, params[f"{prefix}.W_x"]), matmul(h, W_h)), params[f"{prefix}.b"])
    return lstm_cell(z, c, W_h.shape[0])


def run_lstm(params, prefix, inputs, reverse=False):
    """Run a cell over the rows of `inputs` [T, n].

    Returns the hidden states in position order and the final (h, c), which is
    the state after the last position read (position 0 when reversed)."""
    W_h = params[f"{prefix}.W_h"]
    hidden = W_h.shape[0]
    # input projections of all positions at once
    Z = add(matmul(inputs, params[f"{prefix}.W_x"]), params[f"{prefix}.b"])
    T = inputs.shape[0]
    h, c = zero_state(hidden)
    outputs = [None] * T
    for t in range(T - 1, -1, -1) if reverse else range(T):
        h, c = lstm_cell(add(gather(Z, t), matmul(h, W_h)), c, hidden)
        outputs[t] = h
    return outputs, (h, c)


def bilstm(params, prefix, inputs):
    """Bidirectional layer: [T, 2H] states plus the final states of both directions."""
    forward, fwd_final = run_lstm(params, f"{prefix}.fwd", inputs)
    backward, bwd_final = run_lstm(params, f"{prefix}.bwd", inputs, reverse=True)
    states = stack([concat([f, b]) for f, b in zip(forward, backward)])
    return states, fwd_final, bwd_final
