#pragma once

#include "instmask/attention.hpp"
#include "instmask/attention_io.hpp"
#include "instmask/editor.hpp"
#include "instmask/error.hpp"
#include "instmask/evalkit.hpp"
#include "instmask/image.hpp"
#include "instmask/io.hpp"
#include "instmask/maskgen.hpp"
#include "instmask/numerics.hpp"
#include "instmask/parallel.hpp"
#include "instmask/rng.hpp"
#include "instmask/schedule.hpp"
#include "instmask/synthetic.hpp"
