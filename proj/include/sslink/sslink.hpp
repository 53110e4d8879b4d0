#pragma once

#include "sslink/bits.hpp"
#include "sslink/config.hpp"
#include "sslink/dtmf.hpp"
#include "sslink/error.hpp"
#include "sslink/gateway.hpp"
#include "sslink/jam_analysis.hpp"
#include "sslink/link.hpp"
#include "sslink/phy.hpp"
#include "sslink/pulse.hpp"
#include "sslink/session.hpp"
#include "sslink/signal.hpp"
#include "sslink/spectrum.hpp"
#include "sslink/wav.hpp"
