"""
Checking backprop against finite differences
============================================
"""

from attnmil.dataset import Bag
from attnmil.models import TrainConfig, attn_mil_forward, bce_loss, init_attention_model
from attnmil.nncore import grad_check, make_rng

rng = make_rng(0)
cfg = TrainConfig(hidden_dims=(8,), embed_dim=6, attention_dim=4, dropout_rate=0.0)
model = init_attention_model(10, cfg, rng)
bag = Bag("demo", 1, rng.normal(size=(5, 10)))

# analytic gradients from one forward/backward pass
p, _, tape = attn_mil_forward(model, bag)
grads = model.backward_array(tape, bce_loss(p, bag.label)[1])


def loss():
    # re-reads the (perturbed) parameters every call
    return bce_loss(model.forward_array(bag.instances)[0], bag.label)[0]


rep = grad_check(loss, model.parameters(), grads, h=1e-5)
print("entries checked:", rep.n_checked)
print("max relative error: %.2e" % rep.max_rel_error)
