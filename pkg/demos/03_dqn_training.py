# coding: utf-8

# # Offline DQN and its diagnostics
#
# We log a dataset under a uniform behaviour policy, fit a Q-network offline
# and read the usual health signals: the TD loss, the share of probe states
# whose greedy action is A, and the train/test Q gap.

# In[1]:

import numpy as np

from authrl import DqnConfig, EnvConfig, FixedProb, Greedy, simulate, train
from authrl.dataset import trajectories_to_rows
from authrl.ope import stability, td_ratio


# In[2]:

env = EnvConfig()
trajs = simulate(env, FixedProb(0.5), range(600), run_seed=0)
rows = trajectories_to_rows(trajs, day_length=env.horizon)
print(len(rows), "rows")


# A smaller network and fewer epochs than the defaults keep this quick. The
# learning rate still anneals exponentially, which calms the greedy policy
# towards the end of training.

# In[3]:

config = DqnConfig(epochs=20, hidden_layers=(32, 32))
net, metrics = train(rows, config)
print(metrics.iterations, "updates")
print("epoch TD loss:", np.round(metrics.epoch_td_loss[::4], 4))


# The TD ratio compares the Bellman error with the scale of the Q-values.
# Values well below one mean the fit is tight relative to what it predicts.

# In[4]:

qa, qb = metrics.qbar_train[-1]
print("mean Q (train):", round(qa, 3), round(qb, 3))
print("TD ratio:", td_ratio(metrics.epoch_td_loss[-1], qa, qb))
print("Q gap (A, B):", np.round(metrics.q_gap, 4))


# Policy stability: total-variation distance between consecutive windows of
# the probe action distribution. It should shrink as training settles.

# In[5]:

series = stability(metrics.action_distributions(), window=25)
print("early TV:", np.round(np.mean(series[:20]), 4), "late TV:", np.round(np.mean(series[-20:]), 4))
print("final share of A on the probe:", round(metrics.probe_p_a[-1], 3))


# Finally the learned greedy policy against the behaviour policy on users
# the model never saw.

# In[6]:

held_out = range(10_000, 10_400)
for name, pol in (("behavior", FixedProb(0.5)), ("dqn", Greedy(net))):
    ret = [tr.rewards.sum() for tr in simulate(env, pol, held_out, run_seed=7)]
    print(f"{name:9s} {np.mean(ret):.3f} +/- {np.std(ret) / np.sqrt(len(ret)):.3f}")
