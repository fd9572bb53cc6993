#ifndef PHOTOION_PHOTOION_HPP
#define PHOTOION_PHOTOION_HPP

#include "photoion/ctmc.hpp"
#include "photoion/emg.hpp"
#include "photoion/errors.hpp"
#include "photoion/events.hpp"
#include "photoion/io.hpp"
#include "photoion/optimize.hpp"
#include "photoion/parallel.hpp"
#include "photoion/protocols.hpp"
#include "photoion/rng.hpp"
#include "photoion/signal.hpp"
#include "photoion/spectroscopy.hpp"

#endif  // PHOTOION_PHOTOION_HPP
