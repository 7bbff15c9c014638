# coding: utf-8

# # A tour of the user simulator
#
# Each simulated user carries their own linear-Gaussian dynamics for the two
# authentication methods, A and B. This notebook draws a handful of users,
# rolls out fixed behavioural policies on them and looks at what the logged
# trajectories contain.

# In[1]:

import numpy as np

from authrl import EnvConfig, FixedProb, simulate
from authrl.env import make_users


# The default world has an 8-dimensional state and five steps per episode.
# Every user mixes a shared population component with individual noise,
# so users resemble each other in structure while their rewards vary.

# In[2]:

config = EnvConfig()
print(config)


# In[3]:

users = make_users(config, range(3))
for u in users:
    print(u.user_id, np.round(u.init_mean[:4], 3), np.round(u.reward_mean[0], 3))


# Rollouts are keyed by (user seed, run seed, episode), so the same call
# always yields the same trajectories no matter how many users are in the batch.

# In[4]:

trajs = simulate(config, FixedProb(0.5), range(200), run_seed=0)
first = trajs[0]
for t, s in enumerate(first.steps):
    print(t, s.action, round(s.action_prob, 2), round(s.reward, 3))


# In[5]:

again = simulate(config, FixedProb(0.5), [0], run_seed=0)[0]
print("reproducible:", all(a.action == b.action and a.reward == b.reward
                           for a, b in zip(first.steps, again.steps)))


# Average per-step reward by action. The population means for A and B differ,
# so a policy that leans towards the better action should collect more.

# In[6]:

rewards = {"A": [], "B": []}
for tr in trajs:
    for s in tr.steps:
        rewards[s.action].append(s.reward)
for a, r in rewards.items():
    print(a, len(r), round(float(np.mean(r)), 4))


# In[7]:

for p in (0.1, 0.5, 0.9):
    ret = [sum(s.reward for s in tr.steps) for tr in simulate(config, FixedProb(p), range(500))]
    print(f"P(A) = {p}: mean return {np.mean(ret):.3f} +/- {np.std(ret) / np.sqrt(len(ret)):.3f}")
