# RNN Data-Assimilation Lab Package
