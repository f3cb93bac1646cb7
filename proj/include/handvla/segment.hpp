#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "handvla/tracks.hpp"

namespace handvla::segment {

// speed[k] is the wrist speed between samples k and k+1 (m/s).
struct SpeedSeries {
  double fps = 30.0;
  std::vector<double> speed;
  std::vector<bool> valid;
  int size() const { return static_cast<int>(speed.size()); }
};

struct Segment {
  std::string video;
  Hand hand = Hand::Left;
  int start_frame = 0;  // inclusive
  int end_frame = 0;    // exclusive
  int length() const { return end_frame - start_frame; }
  bool operator==(const Segment&) const = default;
};

struct SegmentConfig {
  double sigma_s = 0.1;       // Gaussian smoothing of world positions
  double window_s = 0.5;      // minimum must be the smallest in this centred window
  double min_len_s = 0.5;     // shorter segments are dropped
  double merge_gap_s = 0.2;
};

// Gaussian-smooths positions within each valid span, then differentiates.
// Throws std::invalid_argument with fewer than 2 valid frames.
SpeedSeries wrist_speed(const tracks::HandTrack& track, double sigma_s = 0.1);

// Odd frame count nearest to window_s * fps (rounding up from even).
int window_frames(double window_s, double fps);

// Index k is a cut iff speed[k] is the earliest strict minimum of the centred
// window (truncated at the series ends). The two end indices and invalid
// entries never cut. Throws std::invalid_argument if the window has < 3 frames.
std::vector<int> detect_speed_minima(const SpeedSeries& series, double window_s = 0.5);

// Cuts one hand's track at speed minima; the other hand is not consulted.
std::vector<Segment> segment_track(const tracks::HandTrack& track, const std::string& video,
                                   const SegmentConfig& config = {});

struct CaptionedSegment {
  Segment segment;
  std::string caption;
};

// Lowercase, collapse whitespace, strip trailing punctuation.
std::string normalize_caption(const std::string& caption);

// Joins adjacent same-hand segments whose normalized captions match and whose
// gap is under merge_gap_s. Output is ordered by (hand, start_frame).
std::vector<CaptionedSegment> merge_segments(std::vector<CaptionedSegment> segments, double fps,
                                             double merge_gap_s = 0.2);

// Segment manifest: one {video, hand, start_frame, end_frame} object per line.
void write_segments(std::ostream& out, const std::vector<Segment>& segments);
std::vector<Segment> read_segments(std::istream& in);

}  // namespace handvla::segment
